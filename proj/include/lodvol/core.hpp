#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lodvol {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : Error {
    using Error::Error;
};

struct ProtocolError : Error {
    using Error::Error;
};

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    double operator[](std::size_t axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
    double& operator[](std::size_t axis) { return axis == 0 ? x : (axis == 1 ? y : z); }

    friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
    friend Vec3 operator*(double s, Vec3 a) { return a * s; }
    friend bool operator==(const Vec3&, const Vec3&) = default;
};

inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(Vec3 a) {
    const double n = norm(a);
    return n > 0.0 ? a * (1.0 / n) : a;
}

/// Axis-aligned box in world coordinates.
struct Box {
    Vec3 lo;
    Vec3 hi;

    Vec3 center() const { return (lo + hi) * 0.5; }
    Vec3 extent() const { return hi - lo; }
    double diagonal() const { return norm(hi - lo); }
    double bounding_radius() const { return 0.5 * diagonal(); }
    bool contains(Vec3 p, double slack = 0.0) const {
        for (std::size_t a = 0; a < 3; ++a) {
            if (p[a] < lo[a] - slack || p[a] > hi[a] + slack) return false;
        }
        return true;
    }
    Box expanded(Vec3 by) const { return {lo - by, hi + by}; }
    friend bool operator==(const Box&, const Box&) = default;
};

using Dims3 = std::array<std::uint32_t, 3>;

/// Octree node address. Level 0 is the leaf level; the root sits at levels-1.
/// Member order doubles as the scheduler tie-break order.
struct NodeId {
    std::uint8_t level = 0;
    std::uint16_t ix = 0;
    std::uint16_t iy = 0;
    std::uint16_t iz = 0;

    std::uint32_t coord(std::size_t axis) const { return axis == 0 ? ix : (axis == 1 ? iy : iz); }
    NodeId parent() const;
    std::string to_string() const;

    friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

struct NodeIdHash {
    std::size_t operator()(const NodeId& n) const noexcept {
        const std::uint64_t packed = (std::uint64_t{n.level} << 48) | (std::uint64_t{n.ix} << 32) |
                                     (std::uint64_t{n.iy} << 16) | std::uint64_t{n.iz};
        return std::hash<std::uint64_t>{}(packed);
    }
};

/// Per axis ceil((samples - 1) / b). Throws for b < 2 or fewer than 2 samples.
Dims3 partition_dims(const Dims3& dims, std::uint32_t block_size);

/// Smallest L such that ceil-halving L-1 times yields one node per axis.
std::uint32_t level_count(const Dims3& blocks);

/// Node counts per axis at a level: ceil(blocks / 2^level).
Dims3 nodes_at_level(const Dims3& blocks, std::uint32_t level);

/// Total number of nodes across all levels, i.e. payloads per timestep.
std::uint64_t total_node_count(const Dims3& blocks);

struct DatasetMeta {
    Dims3 dims{2, 2, 2};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{};
    std::uint32_t block_size = 2;
    std::vector<std::string> fields;
    std::uint32_t timesteps = 1;
    std::uint32_t levels = 1;

    /// Builds a validated meta with `levels` derived from the partition.
    static DatasetMeta make(const Dims3& dims, Vec3 spacing, Vec3 origin, std::uint32_t block_size,
                            std::vector<std::string> fields, std::uint32_t timesteps);

    void validate() const;

    Dims3 blocks() const { return partition_dims(dims, block_size); }
    Dims3 nodes_at(std::uint32_t level) const { return nodes_at_level(blocks(), level); }
    std::uint32_t side() const { return block_size + 1; }
    std::size_t samples_per_field() const {
        const std::size_t s = side();
        return s * s * s;
    }
    std::size_t payload_bytes() const { return fields.size() * samples_per_field() * sizeof(float); }
    std::optional<std::size_t> field_index(std::string_view name) const;
    Box world_box() const;
    NodeId root() const { return NodeId{static_cast<std::uint8_t>(levels - 1), 0, 0, 0}; }
    bool is_valid(const NodeId& node) const;
    /// Existing children of an inner node, in x-fastest order.
    std::vector<NodeId> children(const NodeId& node) const;
    /// All nodes of one level in x-fastest order.
    std::vector<NodeId> level_nodes(std::uint32_t level) const;

    friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

/// World-space box of a node, clipped to the grid extent.
Box node_bbox(const NodeId& node, const DatasetMeta& meta);

/// Samples of one node: per field a (b+1)^3 lattice, x-fastest, fields concatenated in meta order.
struct BlockData {
    NodeId node;
    std::uint32_t timestep = 0;
    std::uint32_t block_size = 0;
    std::uint32_t field_count = 0;
    std::vector<float> samples;

    BlockData() = default;
    BlockData(NodeId node, std::uint32_t timestep, std::uint32_t block_size, std::uint32_t field_count);

    std::size_t side() const { return block_size + 1; }
    std::size_t samples_per_field() const { return side() * side() * side(); }
    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
        return x + side() * (y + side() * z);
    }
    std::span<const float> field(std::size_t f) const {
        return std::span<const float>(samples).subspan(f * samples_per_field(), samples_per_field());
    }
    std::span<float> field(std::size_t f) {
        return std::span<float>(samples).subspan(f * samples_per_field(), samples_per_field());
    }
    float at(std::size_t f, std::size_t x, std::size_t y, std::size_t z) const {
        return samples[f * samples_per_field() + index(x, y, z)];
    }
    std::size_t byte_size() const { return samples.size() * sizeof(float); }
};

struct Limit {
    std::string field;
    float lower = 0.0f;
    float upper = 0.0f;

    friend bool operator==(const Limit&, const Limit&) = default;
};

struct SubVolumeSpec {
    std::uint8_t id = 0;
    std::vector<Limit> limits;

    void validate(const DatasetMeta& meta) const;
    friend bool operator==(const SubVolumeSpec&, const SubVolumeSpec&) = default;
};

struct SpecSet {
    std::uint32_t version = 0;
    std::vector<SubVolumeSpec> subvolumes;

    void validate(const DatasetMeta& meta) const;
    /// Same configuration epoch bumped; every modification goes through here.
    SpecSet next(std::vector<SubVolumeSpec> replacement) const {
        return SpecSet{version + 1, std::move(replacement)};
    }
    friend bool operator==(const SpecSet&, const SpecSet&) = default;
};

using FieldValues = std::map<std::string, double, std::less<>>;

/// Minimum slack over all limits: positive strictly inside the intersection of the
/// threshold bands, zero on its boundary, negative outside.
double composite_margin(const FieldValues& values, const SubVolumeSpec& spec);

/// Limit with its field resolved to an index into a sample vector.
struct BoundLimit {
    std::size_t field = 0;
    double lower = 0.0;
    double upper = 0.0;
};

std::vector<BoundLimit> bind_limits(const SubVolumeSpec& spec, const DatasetMeta& meta);

template <typename ValueAt>
double composite_margin(std::span<const BoundLimit> limits, ValueAt&& value_at) {
    double margin = INFINITY;
    for (const BoundLimit& l : limits) {
        const double v = value_at(l.field);
        margin = std::min(margin, std::min(v - l.lower, l.upper - v));
    }
    return margin;
}

struct ResultMesh {
    NodeId node;
    std::uint32_t timestep = 0;
    std::uint32_t spec_version = 0;
    std::uint8_t subvolume_id = 0;
    std::vector<float> positions;                // xyz per vertex, triangle soup
    std::vector<float> normals;                  // xyz per vertex, unit length
    std::vector<std::vector<float>> attributes;  // per field, one value per vertex
    std::optional<std::vector<float>> velocities;

    std::size_t vertex_count() const { return positions.size() / 3; }
    std::size_t triangle_count() const { return vertex_count() / 3; }
    Vec3 position(std::size_t v) const { return {positions[3 * v], positions[3 * v + 1], positions[3 * v + 2]}; }
    Vec3 normal(std::size_t v) const { return {normals[3 * v], normals[3 * v + 1], normals[3 * v + 2]}; }

    friend bool operator==(const ResultMesh&, const ResultMesh&) = default;
};

struct CameraState {
    Vec3 position{};
    Vec3 forward{0.0, 0.0, -1.0};
    Vec3 up{0.0, 1.0, 0.0};
    double vertical_fov = 0.8;
    double aspect = 1.0;
    double near_plane = 0.1;
    double far_plane = 1.0e4;

    /// Normalizes forward and makes up perpendicular to it (Gram-Schmidt).
    void orthonormalize();
    void validate() const;
    static CameraState look_at(Vec3 eye, Vec3 target, Vec3 up_hint, double vertical_fov = 0.8,
                               double aspect = 1.0, double near_plane = 0.1, double far_plane = 1.0e4);
};

struct PrioritizedNode {
    NodeId node;
    float priority = 0.0f;

    friend bool operator==(const PrioritizedNode&, const PrioritizedNode&) = default;
};

struct CutDelta {
    std::vector<PrioritizedNode> added;
    std::vector<NodeId> removed;
    std::vector<PrioritizedNode> reprioritized;

    bool empty() const { return added.empty() && removed.empty() && reprioritized.empty(); }
    friend bool operator==(const CutDelta&, const CutDelta&) = default;
};

}  // namespace lodvol
