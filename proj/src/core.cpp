#include "lodvol/core.hpp"

#include <algorithm>
#include <limits>
#include <set>
#include <sstream>

namespace lodvol {

namespace {

std::uint32_t ceil_div(std::uint64_t a, std::uint64_t b) { return static_cast<std::uint32_t>((a + b - 1) / b); }

}  // namespace

NodeId NodeId::parent() const {
    return NodeId{static_cast<std::uint8_t>(level + 1), static_cast<std::uint16_t>(ix / 2),
                  static_cast<std::uint16_t>(iy / 2), static_cast<std::uint16_t>(iz / 2)};
}

std::string NodeId::to_string() const {
    std::ostringstream os;
    os << unsigned{level} << ',' << ix << ',' << iy << ',' << iz;
    return os.str();
}

Dims3 partition_dims(const Dims3& dims, std::uint32_t block_size) {
    if (block_size < 2) throw Error("block size must be >= 2, got " + std::to_string(block_size));
    Dims3 blocks{};
    for (std::size_t a = 0; a < 3; ++a) {
        if (dims[a] < 2) throw Error("every axis needs at least 2 samples");
        blocks[a] = ceil_div(dims[a] - 1, block_size);
    }
    return blocks;
}

std::uint32_t level_count(const Dims3& blocks) {
    Dims3 n = blocks;
    std::uint32_t levels = 1;
    while (n[0] > 1 || n[1] > 1 || n[2] > 1) {
        for (auto& c : n) c = ceil_div(c, 2);
        ++levels;
    }
    return levels;
}

Dims3 nodes_at_level(const Dims3& blocks, std::uint32_t level) {
    Dims3 n{};
    const std::uint64_t scale = std::uint64_t{1} << level;
    for (std::size_t a = 0; a < 3; ++a) n[a] = ceil_div(blocks[a], scale);
    return n;
}

std::uint64_t total_node_count(const Dims3& blocks) {
    std::uint64_t total = 0;
    const std::uint32_t levels = level_count(blocks);
    for (std::uint32_t l = 0; l < levels; ++l) {
        const Dims3 n = nodes_at_level(blocks, l);
        total += std::uint64_t{n[0]} * n[1] * n[2];
    }
    return total;
}

DatasetMeta DatasetMeta::make(const Dims3& dims, Vec3 spacing, Vec3 origin, std::uint32_t block_size,
                              std::vector<std::string> fields, std::uint32_t timesteps) {
    DatasetMeta meta;
    meta.dims = dims;
    meta.spacing = spacing;
    meta.origin = origin;
    meta.block_size = block_size;
    meta.fields = std::move(fields);
    meta.timesteps = timesteps;
    meta.levels = level_count(partition_dims(dims, block_size));
    meta.validate();
    return meta;
}

void DatasetMeta::validate() const {
    const Dims3 b = partition_dims(dims, block_size);
    if (levels != level_count(b)) throw Error("level count does not match the partition");
    for (std::size_t a = 0; a < 3; ++a) {
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) throw Error("spacing must be positive");
        if (b[a] > std::numeric_limits<std::uint16_t>::max()) throw Error("too many blocks along an axis");
    }
    if (timesteps < 1) throw Error("at least one timestep required");
    if (fields.empty()) throw Error("at least one field required");
    if (fields.size() > 255) throw Error("at most 255 fields supported");
    std::set<std::string_view> seen;
    for (const auto& f : fields) {
        if (f.empty()) throw Error("empty field name");
        if (!seen.insert(f).second) throw Error("duplicate field name '" + f + "'");
    }
}

std::optional<std::size_t> DatasetMeta::field_index(std::string_view name) const {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (fields[i] == name) return i;
    }
    return std::nullopt;
}

Box DatasetMeta::world_box() const {
    Box box;
    for (std::size_t a = 0; a < 3; ++a) {
        box.lo[a] = origin[a];
        box.hi[a] = origin[a] + spacing[a] * (dims[a] - 1);
    }
    return box;
}

bool DatasetMeta::is_valid(const NodeId& node) const {
    if (node.level >= levels) return false;
    const Dims3 n = nodes_at(node.level);
    return node.ix < n[0] && node.iy < n[1] && node.iz < n[2];
}

std::vector<NodeId> DatasetMeta::children(const NodeId& node) const {
    std::vector<NodeId> out;
    if (node.level == 0) return out;
    const Dims3 n = nodes_at(node.level - 1u);
    for (std::uint32_t dz = 0; dz < 2; ++dz) {
        for (std::uint32_t dy = 0; dy < 2; ++dy) {
            for (std::uint32_t dx = 0; dx < 2; ++dx) {
                const std::uint32_t cx = 2u * node.ix + dx;
                const std::uint32_t cy = 2u * node.iy + dy;
                const std::uint32_t cz = 2u * node.iz + dz;
                if (cx < n[0] && cy < n[1] && cz < n[2]) {
                    out.push_back(NodeId{static_cast<std::uint8_t>(node.level - 1), static_cast<std::uint16_t>(cx),
                                         static_cast<std::uint16_t>(cy), static_cast<std::uint16_t>(cz)});
                }
            }
        }
    }
    return out;
}

std::vector<NodeId> DatasetMeta::level_nodes(std::uint32_t level) const {
    const Dims3 n = nodes_at(level);
    std::vector<NodeId> out;
    out.reserve(std::size_t{n[0]} * n[1] * n[2]);
    for (std::uint32_t z = 0; z < n[2]; ++z) {
        for (std::uint32_t y = 0; y < n[1]; ++y) {
            for (std::uint32_t x = 0; x < n[0]; ++x) {
                out.push_back(NodeId{static_cast<std::uint8_t>(level), static_cast<std::uint16_t>(x),
                                     static_cast<std::uint16_t>(y), static_cast<std::uint16_t>(z)});
            }
        }
    }
    return out;
}

Box node_bbox(const NodeId& node, const DatasetMeta& meta) {
    if (!meta.is_valid(node)) throw Error("invalid node " + node.to_string());
    const std::uint64_t cells_per_node = std::uint64_t{meta.block_size} << node.level;
    Box box;
    for (std::size_t a = 0; a < 3; ++a) {
        const std::uint64_t last_cell = meta.dims[a] - 1u;
        const std::uint64_t begin = std::min<std::uint64_t>(node.coord(a) * cells_per_node, last_cell);
        const std::uint64_t end = std::min<std::uint64_t>((node.coord(a) + 1u) * cells_per_node, last_cell);
        box.lo[a] = meta.origin[a] + meta.spacing[a] * static_cast<double>(begin);
        box.hi[a] = meta.origin[a] + meta.spacing[a] * static_cast<double>(end);
    }
    return box;
}

BlockData::BlockData(NodeId node_, std::uint32_t timestep_, std::uint32_t block_size_, std::uint32_t field_count_)
    : node(node_), timestep(timestep_), block_size(block_size_), field_count(field_count_) {
    const std::size_t s = block_size + 1u;
    samples.assign(field_count * s * s * s, 0.0f);
}

void SubVolumeSpec::validate(const DatasetMeta& meta) const {
    if (limits.empty()) throw Error("sub-volume " + std::to_string(id) + " has no limits");
    std::set<std::string_view> seen;
    for (const Limit& l : limits) {
        if (!meta.field_index(l.field)) throw Error("unknown field '" + l.field + "'");
        if (!(l.lower <= l.upper)) throw Error("limit on '" + l.field + "' has lower > upper");
        if (!seen.insert(l.field).second) throw Error("more than one limit on field '" + l.field + "'");
    }
}

void SpecSet::validate(const DatasetMeta& meta) const {
    std::set<std::uint8_t> ids;
    for (const auto& s : subvolumes) {
        s.validate(meta);
        if (!ids.insert(s.id).second) throw Error("duplicate sub-volume id " + std::to_string(s.id));
    }
}

double composite_margin(const FieldValues& values, const SubVolumeSpec& spec) {
    double margin = INFINITY;
    for (const Limit& l : spec.limits) {
        const auto it = values.find(l.field);
        if (it == values.end()) throw Error("no value for field '" + l.field + "'");
        const double v = it->second;
        margin = std::min(margin, std::min(v - double{l.lower}, double{l.upper} - v));
    }
    return margin;
}

std::vector<BoundLimit> bind_limits(const SubVolumeSpec& spec, const DatasetMeta& meta) {
    std::vector<BoundLimit> out;
    out.reserve(spec.limits.size());
    for (const Limit& l : spec.limits) {
        const auto idx = meta.field_index(l.field);
        if (!idx) throw Error("sub-volume " + std::to_string(spec.id) + ": unknown field '" + l.field + "'");
        out.push_back(BoundLimit{*idx, l.lower, l.upper});
    }
    return out;
}

void CameraState::orthonormalize() {
    forward = normalized(forward);
    up = normalized(up - forward * dot(up, forward));
}

void CameraState::validate() const {
    if (!(vertical_fov > 0.0 && vertical_fov < M_PI)) throw Error("vertical fov must lie in (0, pi)");
    if (!(aspect > 0.0)) throw Error("aspect must be positive");
    if (!(near_plane > 0.0 && near_plane < far_plane)) throw Error("need 0 < near < far");
    if (std::abs(norm(forward) - 1.0) > 1e-6 || std::abs(norm(up) - 1.0) > 1e-6) {
        throw Error("camera directions must be unit vectors");
    }
    if (std::abs(dot(forward, up)) > 1e-6) throw Error("camera forward and up must be orthogonal");
}

CameraState CameraState::look_at(Vec3 eye, Vec3 target, Vec3 up_hint, double vertical_fov, double aspect,
                                 double near_plane, double far_plane) {
    CameraState cam;
    cam.position = eye;
    cam.forward = target - eye;
    cam.up = up_hint;
    cam.vertical_fov = vertical_fov;
    cam.aspect = aspect;
    cam.near_plane = near_plane;
    cam.far_plane = far_plane;
    cam.orthonormalize();
    if (norm(cam.up) < 0.5) {
        // up_hint parallel to the view direction; pick any perpendicular
        const Vec3 alt = std::abs(cam.forward.z) < 0.9 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
        cam.up = normalized(alt - cam.forward * dot(alt, cam.forward));
    }
    return cam;
}

}  // namespace lodvol
