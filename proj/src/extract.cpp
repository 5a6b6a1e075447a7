#include "lodvol/extract.hpp"

#include <algorithm>

#include "lodvol/mc_table.hpp"

namespace lodvol {

LatticeAxes node_lattice(const NodeId& node, const DatasetMeta& meta) {
    if (!meta.is_valid(node)) throw Error("invalid node " + node.to_string());
    LatticeAxes axes;
    const std::uint64_t stride = std::uint64_t{1} << node.level;
    const std::uint64_t b = meta.block_size;
    for (std::size_t a = 0; a < 3; ++a) {
        const std::uint64_t last = meta.dims[a] - 1u;
        axes.coords[a].resize(b + 1);
        for (std::uint64_t s = 0; s <= b; ++s) {
            const std::uint64_t global = std::min((node.coord(a) * b + s) * stride, last);
            axes.coords[a][s] = meta.origin[a] + meta.spacing[a] * static_cast<double>(global);
        }
    }
    return axes;
}

MarginGrid margin_field(const BlockData& block, const DatasetMeta& meta, const SubVolumeSpec& spec) {
    const std::vector<BoundLimit> limits = bind_limits(spec, meta);
    for (const BoundLimit& l : limits) {
        if (l.field >= block.field_count) {
            throw Error("sub-volume " + std::to_string(spec.id) + ": block lacks field '" + meta.fields[l.field] + "'");
        }
    }
    MarginGrid grid;
    const std::size_t s = block.side();
    grid.shape = {s, s, s};
    grid.values.resize(block.samples_per_field());
    const std::size_t per_field = block.samples_per_field();
    for (std::size_t i = 0; i < per_field; ++i) {
        grid.values[i] = composite_margin(std::span<const BoundLimit>(limits),
                                          [&](std::size_t f) { return double{block.samples[f * per_field + i]}; });
    }
    return grid;
}

TriangleSoup extract_surface(const MarginGrid& margin, const LatticeAxes& axes) {
    for (std::size_t a = 0; a < 3; ++a) {
        if (axes.size(a) != margin.shape[a]) throw Error("lattice axes do not match the margin grid");
    }
    const auto& edges = mc::cube_edges();
    const auto& table = mc::case_table();
    TriangleSoup soup;
    const auto& [nx, ny, nz] = margin.shape;
    if (nx < 2 || ny < 2 || nz < 2) return soup;

    for (std::size_t z = 0; z + 1 < nz; ++z) {
        if (!(axes.coords[2][z + 1] > axes.coords[2][z])) continue;
        for (std::size_t y = 0; y + 1 < ny; ++y) {
            if (!(axes.coords[1][y + 1] > axes.coords[1][y])) continue;
            for (std::size_t x = 0; x + 1 < nx; ++x) {
                if (!(axes.coords[0][x + 1] > axes.coords[0][x])) continue;
                std::array<double, 8> m{};
                int mask = 0;
                for (int c = 0; c < 8; ++c) {
                    m[c] = margin.at(x + (c & 1), y + ((c >> 1) & 1), z + ((c >> 2) & 1));
                    if (m[c] > 0.0) mask |= 1 << c;
                }
                const auto& tris = table[mask];
                if (tris.empty()) continue;

                std::array<Vec3, 12> world{};
                std::array<Vec3, 12> lat{};
                std::array<bool, 12> ready{};
                const std::array<std::size_t, 3> cell{x, y, z};
                auto vertex = [&](int e) {
                    if (ready[e]) return;
                    const mc::CubeEdge& edge = edges[e];
                    const double t = m[edge.lo] / (m[edge.lo] - m[edge.hi]);
                    for (std::size_t a = 0; a < 3; ++a) {
                        const std::size_t i = cell[a] + ((edge.lo >> a) & 1);
                        if (a == edge.axis) {
                            const double c0 = axes.coords[a][i];
                            world[e][a] = c0 + t * (axes.coords[a][i + 1] - c0);
                            lat[e][a] = static_cast<double>(i) + t;
                        } else {
                            world[e][a] = axes.coords[a][i];
                            lat[e][a] = static_cast<double>(i);
                        }
                    }
                    ready[e] = true;
                };
                for (const mc::Triangle& tri : tris) {
                    std::array<std::array<float, 3>, 3> p{};
                    for (int k = 0; k < 3; ++k) {
                        vertex(tri[k]);
                        for (std::size_t a = 0; a < 3; ++a) p[k][a] = static_cast<float>(world[tri[k]][a]);
                    }
                    const Vec3 p0{p[0][0], p[0][1], p[0][2]};
                    const Vec3 n = cross(Vec3{p[1][0], p[1][1], p[1][2]} - p0, Vec3{p[2][0], p[2][1], p[2][2]} - p0);
                    if (dot(n, n) == 0.0) continue;
                    for (int k = 0; k < 3; ++k) {
                        soup.positions.insert(soup.positions.end(), p[k].begin(), p[k].end());
                        const Vec3& l = lat[tri[k]];
                        soup.lattice.insert(soup.lattice.end(), {l.x, l.y, l.z});
                    }
                }
            }
        }
    }
    return soup;
}

std::vector<float> compute_normals(const TriangleSoup& mesh, const MarginGrid& margin, const LatticeAxes& axes) {
    const auto& shape = margin.shape;
    const std::size_t count = margin.values.size();
    // gradient lattice, one array per component
    std::array<std::vector<double>, 3> grad;
    for (auto& g : grad) g.resize(count);
    for (std::size_t z = 0; z < shape[2]; ++z) {
        for (std::size_t y = 0; y < shape[1]; ++y) {
            for (std::size_t x = 0; x < shape[0]; ++x) {
                const std::array<std::size_t, 3> p{x, y, z};
                const std::size_t here = margin.index(x, y, z);
                for (std::size_t a = 0; a < 3; ++a) {
                    const std::size_t lo = p[a] > 0 ? p[a] - 1 : 0;
                    const std::size_t hi = std::min(p[a] + 1, shape[a] - 1);
                    const double h = axes.coords[a][hi] - axes.coords[a][lo];
                    if (!(h > 0.0)) {
                        grad[a][here] = 0.0;
                        continue;
                    }
                    std::array<std::size_t, 3> ql = p, qh = p;
                    ql[a] = lo;
                    qh[a] = hi;
                    grad[a][here] = (margin.at(qh[0], qh[1], qh[2]) - margin.at(ql[0], ql[1], ql[2])) / h;
                }
            }
        }
    }

    std::vector<float> normals(mesh.positions.size());
    for (std::size_t v = 0; v < mesh.vertex_count(); ++v) {
        const Vec3 at = mesh.lattice_point(v);
        Vec3 n{-sample_trilinear<double>(grad[0], shape, at), -sample_trilinear<double>(grad[1], shape, at),
               -sample_trilinear<double>(grad[2], shape, at)};
        double len = norm(n);
        if (!(len > 1e-12) || !std::isfinite(len)) {
            const std::size_t t0 = (v / 3) * 3;
            n = cross(mesh.position(t0 + 1) - mesh.position(t0), mesh.position(t0 + 2) - mesh.position(t0));
            len = norm(n);
        }
        n = n * (1.0 / len);
        normals[3 * v] = static_cast<float>(n.x);
        normals[3 * v + 1] = static_cast<float>(n.y);
        normals[3 * v + 2] = static_cast<float>(n.z);
    }
    return normals;
}

VertexAttributes sample_attributes(const BlockData& block, const TriangleSoup& mesh, const DatasetMeta& meta) {
    VertexAttributes out;
    const std::size_t s = block.side();
    const std::array<std::size_t, 3> shape{s, s, s};
    const std::size_t n = mesh.vertex_count();
    out.fields.resize(block.field_count);
    for (std::size_t f = 0; f < block.field_count; ++f) {
        auto& values = out.fields[f];
        values.resize(n);
        const auto samples = block.field(f);
        for (std::size_t v = 0; v < n; ++v) {
            values[v] = static_cast<float>(sample_trilinear(samples, shape, mesh.lattice_point(v)));
        }
    }
    const auto u = meta.field_index("u");
    const auto vv = meta.field_index("v");
    const auto w = meta.field_index("w");
    if (u && vv && w && *u < block.field_count && *vv < block.field_count && *w < block.field_count) {
        std::vector<float> vel(3 * n);
        for (std::size_t v = 0; v < n; ++v) {
            vel[3 * v] = out.fields[*u][v];
            vel[3 * v + 1] = out.fields[*vv][v];
            vel[3 * v + 2] = out.fields[*w][v];
        }
        out.velocities = std::move(vel);
    }
    return out;
}

std::vector<ResultMesh> extract_node(const BlockData& block, const DatasetMeta& meta, const SpecSet& specs) {
    std::vector<ResultMesh> out;
    if (specs.subvolumes.empty()) return out;
    const LatticeAxes axes = node_lattice(block.node, meta);
    for (const SubVolumeSpec& spec : specs.subvolumes) {
        try {
            const MarginGrid margin = margin_field(block, meta, spec);
            const TriangleSoup soup = extract_surface(margin, axes);
            ResultMesh mesh;
            mesh.node = block.node;
            mesh.timestep = block.timestep;
            mesh.spec_version = specs.version;
            mesh.subvolume_id = spec.id;
            mesh.normals = compute_normals(soup, margin, axes);
            VertexAttributes attrs = sample_attributes(block, soup, meta);
            mesh.attributes = std::move(attrs.fields);
            mesh.velocities = std::move(attrs.velocities);
            mesh.positions = soup.positions;
            out.push_back(std::move(mesh));
        } catch (const Error& e) {
            throw Error("sub-volume " + std::to_string(spec.id) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace lodvol
