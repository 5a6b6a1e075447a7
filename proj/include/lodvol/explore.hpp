#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lodvol/client.hpp"
#include "lodvol/core.hpp"
#include "lodvol/cut.hpp"

namespace lodvol {

struct CameraKey {
    double time = 0.0;
    Vec3 position;
    Vec3 target;
    Vec3 up{0.0, 0.0, 1.0};
    double vertical_fov = 0.8;
    double aspect = 1.0;
    double near_plane = 0.1;
    double far_plane = 1.0e4;
};

struct SpecKey {
    double time = 0.0;
    std::vector<SubVolumeSpec> subvolumes;
};

struct TimestepKey {
    double time = 0.0;
    std::uint32_t timestep = 0;
};

/// Scripted headless session: a camera path plus spec and timestep timelines.
/// Times are script seconds; all timelines are step functions except the camera,
/// which interpolates linearly between keyframes.
struct ExploreScript {
    std::string dataset;  // empty: whatever the server serves
    double duration = 0.0;
    double frame_interval = 0.05;
    bool realtime = true;         // sleep so frames are frame_interval apart in wall time
    double settle_timeout = 30.0;  // wall seconds to wait for a fully fresh cut after the last frame
    std::uint32_t check_frames = 3;  // frames run after settling with the final camera
    double theta_split = kDefaultThetaSplit;
    std::vector<CameraKey> cameras;
    std::vector<SpecKey> specs;
    std::vector<TimestepKey> timesteps;
    std::string report;  // output path, may be overridden on the command line

    static ExploreScript parse(const std::string& json_text);
    static ExploreScript load(const std::filesystem::path& path);
    void validate() const;

    CameraState camera_at(double t) const;
    /// Index into specs / timesteps active at time t.
    std::size_t spec_index(double t) const;
    std::uint32_t timestep_at(double t) const;
};

struct Completion {
    NodeId node;
    std::uint32_t timestep = 0;
    std::uint32_t version = 0;
    std::uint64_t frame = 0;
    double distance = 0.0;  // camera to node center when the node turned fresh
    std::uint64_t triangles = 0;
    double latency_ms = 0.0;  // since the node was last requested
    std::uint64_t frames_to_fresh = 0;
};

struct FrameRecord {
    std::uint32_t added = 0;
    std::uint32_t removed = 0;
    std::uint32_t reprioritized = 0;
    bool full_request = false;
};

struct ExploreResult {
    std::string dataset;
    DatasetMeta meta;
    bool partial = false;
    std::string failure;
    bool settled = false;
    std::vector<FrameRecord> frames;
    std::vector<std::uint32_t> check_requests;  // requests in each frame after settling
    std::uint32_t spec_versions = 0;            // SET_SPEC messages sent
    std::vector<std::uint32_t> abort_acks;
    std::vector<std::string> errors;
    std::vector<Completion> completions;
    std::uint64_t dropped = 0;
    std::uint64_t bytes_received = 0;
    std::uint64_t triangles_received = 0;
    // final cut
    std::size_t cut_nodes = 0;
    std::size_t cut_fresh = 0;
    std::size_t cut_stale = 0;
    std::size_t cut_empty = 0;
    std::uint64_t cut_triangles = 0;
    double wall_seconds = 0.0;
    double settle_seconds = 0.0;

    std::string to_json() const;
};

/// Drives a Cut against a backend along the script. Connection loss ends the run early
/// with `partial` set instead of throwing.
ExploreResult run_explore(const ExploreScript& script, const net::Endpoint& server,
                          BackendClient::Transport transport = BackendClient::Transport::tcp);

}  // namespace lodvol
