#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "lodvol/core.hpp"

namespace lodvol {

/// World coordinate of every lattice sample along each axis. Samples past the grid border are
/// clamped onto it, so trailing entries may repeat; cells of zero width are never marched.
struct LatticeAxes {
    std::array<std::vector<double>, 3> coords;

    std::size_t size(std::size_t axis) const { return coords[axis].size(); }
};

LatticeAxes node_lattice(const NodeId& node, const DatasetMeta& meta);

/// Composite margin of one sub-volume at every sample of a block, x-fastest.
struct MarginGrid {
    std::array<std::size_t, 3> shape{};
    std::vector<double> values;

    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return x + shape[0] * (y + shape[1] * z); }
    double at(std::size_t x, std::size_t y, std::size_t z) const { return values[index(x, y, z)]; }
};

/// Unindexed triangles plus, per vertex, its fractional lattice coordinate inside the block.
struct TriangleSoup {
    std::vector<float> positions;  // xyz per vertex
    std::vector<double> lattice;   // xyz per vertex, lattice units

    std::size_t vertex_count() const { return positions.size() / 3; }
    std::size_t triangle_count() const { return vertex_count() / 3; }
    Vec3 position(std::size_t v) const { return {positions[3 * v], positions[3 * v + 1], positions[3 * v + 2]}; }
    Vec3 lattice_point(std::size_t v) const { return {lattice[3 * v], lattice[3 * v + 1], lattice[3 * v + 2]}; }
};

/// Trilinear interpolation of a lattice array at a fractional lattice coordinate.
template <typename T>
double sample_trilinear(std::span<const T> values, const std::array<std::size_t, 3>& shape, Vec3 at) {
    std::array<std::size_t, 3> i0{};
    std::array<double, 3> f{};
    for (std::size_t a = 0; a < 3; ++a) {
        const double c = std::clamp(at[a], 0.0, static_cast<double>(shape[a] - 1));
        std::size_t i = static_cast<std::size_t>(c);
        if (i >= shape[a] - 1) i = shape[a] >= 2 ? shape[a] - 2 : 0;
        i0[a] = i;
        f[a] = c - static_cast<double>(i);
    }
    double result = 0.0;
    for (int c = 0; c < 8; ++c) {
        const std::size_t dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
        const double w = (dx ? f[0] : 1.0 - f[0]) * (dy ? f[1] : 1.0 - f[1]) * (dz ? f[2] : 1.0 - f[2]);
        if (w == 0.0) continue;
        result += w * static_cast<double>(values[(i0[0] + dx) + shape[0] * ((i0[1] + dy) + shape[1] * (i0[2] + dz))]);
    }
    return result;
}

MarginGrid margin_field(const BlockData& block, const DatasetMeta& meta, const SubVolumeSpec& spec);

/// Marching cubes of the level set margin = 0 with the positive side as interior. Triangles
/// wind counter-clockwise seen from outside; zero-area triangles are dropped.
TriangleSoup extract_surface(const MarginGrid& margin, const LatticeAxes& axes);

/// Unit normals, -grad(margin) from central differences interpolated at each vertex. Falls back
/// to the triangle's own normal where the gradient vanishes.
std::vector<float> compute_normals(const TriangleSoup& mesh, const MarginGrid& margin, const LatticeAxes& axes);

struct VertexAttributes {
    std::vector<std::vector<float>> fields;         // meta field order
    std::optional<std::vector<float>> velocities;  // from fields u, v, w when all exist
};

VertexAttributes sample_attributes(const BlockData& block, const TriangleSoup& mesh, const DatasetMeta& meta);

/// One mesh per sub-volume, in spec order. Empty meshes are kept.
std::vector<ResultMesh> extract_node(const BlockData& block, const DatasetMeta& meta, const SpecSet& specs);

}  // namespace lodvol
