#include "lodvol/cut.hpp"

#include <numbers>

namespace lodvol {

double solid_angle(const Box& box, Vec3 eye) {
    const double r = box.bounding_radius();
    const double d = norm(box.center() - eye);
    if (d <= r) return 2.0 * std::numbers::pi;
    return 2.0 * std::numbers::pi * (1.0 - d / std::sqrt(d * d + r * r));
}

double priority_of(const Box& box, Vec3 eye, double dataset_diagonal) {
    return 1.0 / (1.0 + norm(box.center() - eye) / dataset_diagonal);
}

Frustum::Frustum(const CameraState& camera) {
    CameraState c = camera;
    c.orthonormalize();
    const Vec3 f = c.forward;
    const Vec3 u = c.up;
    const Vec3 r = cross(f, u);
    const double th = std::tan(0.5 * c.vertical_fov);
    const double tw = th * c.aspect;
    auto through_eye = [&](Vec3 n) {
        n = normalized(n);
        return Plane{n, -dot(n, c.position)};
    };
    planes_ = {
        through_eye(f * tw - r),
        through_eye(f * tw + r),
        through_eye(f * th - u),
        through_eye(f * th + u),
        Plane{f, -dot(f, c.position) - c.near_plane},
        Plane{f * -1.0, dot(f, c.position) + c.far_plane},
    };
}

bool Frustum::intersects(const Box& box) const {
    for (const Plane& p : planes_) {
        Vec3 corner;
        for (std::size_t a = 0; a < 3; ++a) corner[a] = p.normal[a] >= 0.0 ? box.hi[a] : box.lo[a];
        if (dot(p.normal, corner) + p.offset < 0.0) return false;
    }
    return true;
}

Cut::Cut(DatasetMeta meta, double theta_split)
    : meta_(std::move(meta)), theta_split_(theta_split), diagonal_(meta_.world_box().diagonal()) {
    meta_.validate();
    if (!(theta_split_ > 0.0)) throw Error("split threshold must be positive");
}

void Cut::visit(const NodeId& node, const CameraState& camera, const Frustum& frustum, std::map<NodeId, float>& out,
                std::set<NodeId>& split) {
    const Box box = node_bbox(node, meta_);
    if (!frustum.intersects(box)) return;
    const double omega = solid_angle(box, camera.position);
    const bool was_split = split_.count(node) != 0;
    const bool refine = node.level > 0 && (omega > theta_split_ || (was_split && omega > kMergeFactor * theta_split_));
    if (!refine) {
        out.emplace(node, static_cast<float>(priority_of(box, camera.position, diagonal_)));
        return;
    }
    split.insert(node);
    for (const NodeId& child : meta_.children(node)) visit(child, camera, frustum, out, split);
}

CutDelta Cut::update(const CameraState& camera) {
    camera.validate();
    const Frustum frustum(camera);
    std::map<NodeId, float> next;
    std::set<NodeId> split;
    visit(meta_.root(), camera, frustum, next, split);
    split_ = std::move(split);

    CutDelta delta;
    for (auto it = nodes_.begin(); it != nodes_.end();) {
        if (!next.count(it->first)) {
            delta.removed.push_back(it->first);
            it = nodes_.erase(it);
        } else {
            ++it;
        }
    }
    for (const auto& [node, priority] : next) {
        auto it = nodes_.find(node);
        if (it == nodes_.end()) {
            CutNode n;
            n.priority = priority;
            nodes_.emplace(node, std::move(n));
            delta.added.push_back({node, priority});
        } else if (std::abs(priority - it->second.priority) > kPriorityEpsilon) {
            it->second.priority = priority;
            delta.reprioritized.push_back({node, priority});
        }
    }
    return delta;
}

CutDelta Cut::full_request() const {
    CutDelta delta;
    for (const auto& [node, n] : nodes_) delta.added.push_back({node, n.priority});
    return delta;
}

void Cut::set_epoch(std::uint32_t version, std::uint32_t timestep) {
    version_ = version;
    timestep_ = timestep;
    for (auto& [node, n] : nodes_) {
        n.incoming.clear();
        if (n.state == RenderState::fresh) n.state = RenderState::stale;
    }
}

ApplyOutcome Cut::apply(const proto::Message& message) {
    const proto::WorkKey* key = nullptr;
    proto::WorkKey from_mesh;
    if (const auto* r = std::get_if<proto::ResultMeshMsg>(&message)) {
        from_mesh = r->key();
        key = &from_mesh;
    } else if (const auto* d = std::get_if<proto::NodeDone>(&message)) {
        key = &d->key;
    } else {
        return ApplyOutcome::ignored;
    }
    const auto it = nodes_.find(key->node);
    if (key->version != version_ || key->timestep != timestep_ || it == nodes_.end()) {
        ++dropped_;
        return ApplyOutcome::dropped;
    }
    CutNode& n = it->second;
    if (const auto* r = std::get_if<proto::ResultMeshMsg>(&message)) {
        n.incoming.push_back(r->mesh);
        return ApplyOutcome::mesh_buffered;
    }
    n.meshes = std::move(n.incoming);
    n.incoming.clear();
    n.state = RenderState::fresh;
    return ApplyOutcome::node_fresh;
}

std::size_t Cut::count(RenderState state) const {
    std::size_t c = 0;
    for (const auto& [node, n] : nodes_) c += n.state == state ? 1 : 0;
    return c;
}

std::vector<const ResultMesh*> Cut::renderable() const {
    std::vector<const ResultMesh*> out;
    for (const auto& [node, n] : nodes_) {
        if (n.state == RenderState::empty) continue;
        for (const ResultMesh& m : n.meshes) out.push_back(&m);
    }
    return out;
}

std::vector<float> advect(const ResultMesh& mesh, double s, double dt) {
    std::vector<float> out = mesh.positions;
    if (!mesh.velocities || mesh.velocities->size() != out.size()) return out;
    const double k = s * dt;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<float>(double{mesh.positions[i]} + double{(*mesh.velocities)[i]} * k);
    }
    return out;
}

}  // namespace lodvol
