#pragma once

#include <array>
#include <map>
#include <set>
#include <vector>

#include "lodvol/core.hpp"
#include "lodvol/protocol.hpp"

namespace lodvol {

inline constexpr double kDefaultThetaSplit = 0.05;  // steradians
inline constexpr double kMergeFactor = 0.8;
inline constexpr float kPriorityEpsilon = 1e-3f;

/// Solid angle of the box's bounding sphere seen from `eye`; 2*pi when the eye is inside it.
double solid_angle(const Box& box, Vec3 eye);

/// 1 / (1 + d / diag), d = distance from the camera to the box center, diag = dataset diagonal.
double priority_of(const Box& box, Vec3 eye, double dataset_diagonal);

/// View frustum as six inward-facing planes.
class Frustum {
public:
    explicit Frustum(const CameraState& camera);

    /// Conservative: false only when the box lies entirely outside one plane.
    bool intersects(const Box& box) const;

private:
    struct Plane {
        Vec3 normal;
        double offset;  // inside where dot(normal, p) + offset >= 0
    };
    std::array<Plane, 6> planes_;
};

enum class RenderState { empty, stale, fresh };

struct CutNode {
    float priority = 0.0f;  // last priority sent to the backend
    RenderState state = RenderState::empty;
    std::vector<ResultMesh> meshes;    // what is rendered
    std::vector<ResultMesh> incoming;  // meshes of the current epoch awaiting NODE_DONE
};

enum class ApplyOutcome { mesh_buffered, node_fresh, dropped, ignored };

/// View-dependent cut through the octree plus the per-node rendering state.
class Cut {
public:
    explicit Cut(DatasetMeta meta, double theta_split = kDefaultThetaSplit);

    /// Recomputes the cut from the root and returns what changed since the previous call.
    /// A visible node splits when its solid angle exceeds theta_split, or exceeds
    /// 0.8 * theta_split while it was already split in the previous cut.
    CutDelta update(const CameraState& camera);

    /// Every cut node as an addition, for re-requesting after an epoch change.
    CutDelta full_request() const;

    /// New spec version and/or timestep: fresh nodes turn stale, partial results are dropped.
    void set_epoch(std::uint32_t version, std::uint32_t timestep);
    std::uint32_t version() const { return version_; }
    std::uint32_t timestep() const { return timestep_; }

    /// Applies RESULT_MESH and NODE_DONE frames; everything else is ignored.
    ApplyOutcome apply(const proto::Message& message);

    const std::map<NodeId, CutNode>& nodes() const { return nodes_; }
    bool contains(const NodeId& node) const { return nodes_.count(node) != 0; }
    std::size_t count(RenderState state) const;
    std::uint64_t dropped() const { return dropped_; }
    /// Meshes to draw this frame: fresh and stale nodes.
    std::vector<const ResultMesh*> renderable() const;

    const DatasetMeta& meta() const { return meta_; }
    double theta_split() const { return theta_split_; }

private:
    void visit(const NodeId& node, const CameraState& camera, const Frustum& frustum, std::map<NodeId, float>& out,
               std::set<NodeId>& split);

    DatasetMeta meta_;
    double theta_split_;
    double diagonal_;
    std::map<NodeId, CutNode> nodes_;
    std::set<NodeId> split_;  // nodes represented by their children in the current cut
    std::uint32_t version_ = 0;
    std::uint32_t timestep_ = 0;
    std::uint64_t dropped_ = 0;
};

/// position + velocity * s * dt per vertex; positions unchanged without velocities.
std::vector<float> advect(const ResultMesh& mesh, double s, double dt);

}  // namespace lodvol
