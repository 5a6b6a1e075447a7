#include "lodvol/explore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "lodvol/protocol.hpp"

namespace lodvol {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

Vec3 vec3_of(const json& j, const char* what) {
    if (!j.is_array() || j.size() != 3) throw Error(std::string(what) + " must be an array of three numbers");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

template <typename Key>
void check_increasing(const std::vector<Key>& keys, const char* what) {
    for (std::size_t i = 1; i < keys.size(); ++i) {
        if (!(keys[i].time > keys[i - 1].time)) throw Error(std::string(what) + " times must be strictly increasing");
    }
}

template <typename Key>
std::size_t active_index(const std::vector<Key>& keys, double t) {
    std::size_t k = 0;
    while (k + 1 < keys.size() && keys[k + 1].time <= t) ++k;
    return k;
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double percentile(std::vector<double> v, double p) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const auto k = static_cast<std::size_t>(std::ceil(p * double(v.size()))) - 1;
    return v[std::min(k, v.size() - 1)];
}

json node_json(const NodeId& n) { return json::array({n.level, n.ix, n.iy, n.iz}); }

}  // namespace

ExploreScript ExploreScript::parse(const std::string& json_text) {
    ExploreScript s;
    try {
        const json j = json::parse(json_text);
        s.dataset = j.value("dataset", "");
        s.duration = j.value("duration", 0.0);
        s.frame_interval = j.value("frame_interval", s.frame_interval);
        s.realtime = j.value("realtime", s.realtime);
        s.settle_timeout = j.value("settle_timeout", s.settle_timeout);
        s.check_frames = j.value("check_frames", s.check_frames);
        s.theta_split = j.value("theta_split", s.theta_split);
        s.report = j.value("report", "");
        for (const json& c : j.at("cameras")) {
            CameraKey k;
            k.time = c.value("time", 0.0);
            k.position = vec3_of(c.at("position"), "camera position");
            k.target = vec3_of(c.at("target"), "camera target");
            if (c.contains("up")) k.up = vec3_of(c["up"], "camera up");
            k.vertical_fov = c.value("fov", k.vertical_fov);
            k.aspect = c.value("aspect", k.aspect);
            k.near_plane = c.value("near", k.near_plane);
            k.far_plane = c.value("far", k.far_plane);
            s.cameras.push_back(k);
        }
        for (const json& sp : j.at("specs")) {
            SpecKey k;
            k.time = sp.value("time", 0.0);
            for (const json& sv : sp.at("subvolumes")) {
                SubVolumeSpec v;
                v.id = sv.at("id").get<std::uint8_t>();
                for (const json& l : sv.at("limits")) {
                    v.limits.push_back(Limit{l.at("field").get<std::string>(), l.at("lower").get<float>(),
                                             l.at("upper").get<float>()});
                }
                k.subvolumes.push_back(std::move(v));
            }
            s.specs.push_back(std::move(k));
        }
        if (j.contains("timesteps")) {
            for (const json& t : j["timesteps"]) s.timesteps.push_back({t.value("time", 0.0), t.at("timestep").get<std::uint32_t>()});
        }
    } catch (const json::exception& e) {
        throw Error(std::string("bad explore script: ") + e.what());
    }
    s.validate();
    return s;
}

ExploreScript ExploreScript::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::stringstream text;
    text << in.rdbuf();
    return parse(text.str());
}

void ExploreScript::validate() const {
    if (cameras.empty()) throw Error("explore script needs at least one camera keyframe");
    if (specs.empty()) throw Error("explore script needs at least one spec");
    check_increasing(cameras, "camera keyframe");
    check_increasing(specs, "spec");
    check_increasing(timesteps, "timestep");
    if (!(duration >= 0.0)) throw Error("duration must be nonnegative");
    if (!(frame_interval > 0.0)) throw Error("frame_interval must be positive");
    if (!(settle_timeout >= 0.0)) throw Error("settle_timeout must be nonnegative");
    if (!(theta_split > 0.0)) throw Error("theta_split must be positive");
    for (double t = 0.0; t <= duration; t += std::max(frame_interval, duration / 64.0)) camera_at(t).validate();
}

CameraState ExploreScript::camera_at(double t) const {
    std::size_t k = active_index(cameras, t);
    const CameraKey& a = cameras[k];
    CameraKey c = a;
    if (k + 1 < cameras.size() && t > a.time) {
        const CameraKey& b = cameras[k + 1];
        const double w = std::clamp((t - a.time) / (b.time - a.time), 0.0, 1.0);
        auto mix = [w](auto x, auto y) { return x * (1.0 - w) + y * w; };
        c.position = mix(a.position, b.position);
        c.target = mix(a.target, b.target);
        c.up = mix(a.up, b.up);
        c.vertical_fov = mix(a.vertical_fov, b.vertical_fov);
        c.aspect = mix(a.aspect, b.aspect);
        c.near_plane = mix(a.near_plane, b.near_plane);
        c.far_plane = mix(a.far_plane, b.far_plane);
    }
    return CameraState::look_at(c.position, c.target, c.up, c.vertical_fov, c.aspect, c.near_plane, c.far_plane);
}

std::size_t ExploreScript::spec_index(double t) const { return active_index(specs, t); }

std::uint32_t ExploreScript::timestep_at(double t) const {
    return timesteps.empty() ? 0 : timesteps[active_index(timesteps, t)].timestep;
}

namespace {

struct ConnectionLost {};

class Explorer {
public:
    Explorer(const ExploreScript& script, BackendClient& client, ExploreResult& result)
        : script_(script), client_(client), result_(result), cut_(result.meta, script.theta_split) {
        for (const SpecKey& k : script_.specs) SpecSet{1, k.subvolumes}.validate(result_.meta);
        for (const TimestepKey& k : script_.timesteps) {
            if (k.timestep >= result_.meta.timesteps) throw Error("script timestep " + std::to_string(k.timestep) + " out of range");
        }
    }

    void run() {
        const Clock::time_point start = Clock::now();
        const auto frames = static_cast<std::uint64_t>(std::floor(script_.duration / script_.frame_interval + 1e-9)) + 1;
        for (std::uint64_t k = 0; k < frames; ++k) {
            if (script_.realtime) {
                std::this_thread::sleep_until(start + std::chrono::duration_cast<Clock::duration>(
                                                          std::chrono::duration<double>(double(k) * script_.frame_interval)));
            }
            step(double(k) * script_.frame_interval);
        }

        const Clock::time_point settle_start = Clock::now();
        const auto deadline = settle_start + std::chrono::duration_cast<Clock::duration>(
                                                 std::chrono::duration<double>(script_.settle_timeout));
        while (!settled() && Clock::now() < deadline) {
            if (auto m = client_.wait(std::chrono::milliseconds(20))) {
                handle(*m);
            } else {
                check_open();
            }
        }
        result_.settled = settled();
        result_.settle_seconds = std::chrono::duration<double>(Clock::now() - settle_start).count();

        for (std::uint32_t i = 0; i < script_.check_frames; ++i) {
            drain();
            const CutDelta d = cut_.update(camera_);
            result_.check_requests.push_back(
                static_cast<std::uint32_t>(d.added.size() + d.removed.size() + d.reprioritized.size()));
            send_delta(d);
            ++frame_;
        }
        finish();
    }

    void finish() {
        result_.dropped = cut_.dropped();
        result_.cut_nodes = cut_.nodes().size();
        result_.cut_fresh = cut_.count(RenderState::fresh);
        result_.cut_stale = cut_.count(RenderState::stale);
        result_.cut_empty = cut_.count(RenderState::empty);
        result_.cut_triangles = 0;
        for (const ResultMesh* m : cut_.renderable()) result_.cut_triangles += m->triangle_count();
    }

private:
    bool settled() const {
        return cut_.count(RenderState::fresh) == cut_.nodes().size() && result_.abort_acks.size() >= result_.spec_versions;
    }

    void check_open() {
        if (!client_.open()) throw ConnectionLost{};
    }

    void drain() {
        while (auto m = client_.poll()) handle(*m);
        check_open();
    }

    void step(double t) {
        drain();
        const std::size_t si = script_.spec_index(t);
        const std::uint32_t ts = script_.timestep_at(t);
        const bool epoch = !have_epoch_ || si != spec_index_ || ts != cut_.timestep();
        if (epoch) {
            have_epoch_ = true;
            spec_index_ = si;
            const std::uint32_t version = cut_.version() + 1;
            const SpecSet specs{version, script_.specs[si].subvolumes};
            if (!client_.send(proto::to_wire(specs, result_.meta))) throw ConnectionLost{};
            ++result_.spec_versions;
            cut_.set_epoch(version, ts);
        }
        camera_ = script_.camera_at(t);
        CutDelta d = cut_.update(camera_);
        if (epoch) {
            // the backend dropped everything on SET_SPEC; ask for the whole cut again
            d = cut_.full_request();
        }
        FrameRecord rec;
        rec.added = static_cast<std::uint32_t>(d.added.size());
        rec.removed = static_cast<std::uint32_t>(d.removed.size());
        rec.reprioritized = static_cast<std::uint32_t>(d.reprioritized.size());
        rec.full_request = epoch;
        result_.frames.push_back(rec);
        send_delta(d);
        ++frame_;
    }

    void send_delta(const CutDelta& d) {
        const Clock::time_point now = Clock::now();
        for (const PrioritizedNode& n : d.added) requested_[n.node] = {frame_, now};
        for (const NodeId& n : d.removed) requested_.erase(n);
        if (d.empty()) return;
        if (!client_.send(proto::CutDeltaMsg{cut_.version(), cut_.timestep(), d})) throw ConnectionLost{};
    }

    void handle(const proto::Message& m) {
        if (const auto* r = std::get_if<proto::ResultMeshMsg>(&m)) {
            result_.triangles_received += r->mesh.triangle_count();
            cut_.apply(m);
        } else if (const auto* done = std::get_if<proto::NodeDone>(&m)) {
            if (cut_.apply(m) != ApplyOutcome::node_fresh) return;
            Completion c;
            c.node = done->key.node;
            c.timestep = done->key.timestep;
            c.version = done->key.version;
            c.frame = frame_;
            c.distance = norm(node_bbox(c.node, result_.meta).center() - camera_.position);
            for (const ResultMesh& mesh : cut_.nodes().at(c.node).meshes) c.triangles += mesh.triangle_count();
            if (auto it = requested_.find(c.node); it != requested_.end()) {
                c.latency_ms = std::chrono::duration<double, std::milli>(Clock::now() - it->second.second).count();
                c.frames_to_fresh = frame_ - it->second.first;
            }
            result_.completions.push_back(c);
        } else if (const auto* ack = std::get_if<proto::AbortAck>(&m)) {
            result_.abort_acks.push_back(ack->version);
        } else if (const auto* err = std::get_if<proto::ErrorMsg>(&m)) {
            result_.errors.push_back(std::to_string(static_cast<int>(err->code)) + ": " + err->message);
        }
    }

    const ExploreScript& script_;
    BackendClient& client_;
    ExploreResult& result_;
    Cut cut_;
    CameraState camera_;
    bool have_epoch_ = false;
    std::size_t spec_index_ = 0;
    std::uint64_t frame_ = 0;
    std::map<NodeId, std::pair<std::uint64_t, Clock::time_point>> requested_;
};

}  // namespace

ExploreResult run_explore(const ExploreScript& script, const net::Endpoint& server, BackendClient::Transport transport) {
    script.validate();
    ExploreResult result;
    result.dataset = script.dataset;
    const Clock::time_point start = Clock::now();
    std::unique_ptr<BackendClient> client;
    auto fail = [&](std::string why) {
        result.partial = true;
        result.failure = std::move(why);
        if (client) result.bytes_received = client->bytes_received();
        result.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
        return result;
    };
    try {
        client = BackendClient::connect(server, transport);
        result.meta = client->hello();
        if (!script.dataset.empty()) {
            client->send(proto::Open{script.dataset});
            for (;;) {
                auto m = client->wait(std::chrono::seconds(10));
                if (!m) throw IoError("no reply to OPEN '" + script.dataset + "'");
                if (auto* info = std::get_if<proto::DatasetInfo>(&*m)) {
                    result.meta = info->meta;
                    break;
                }
                if (auto* err = std::get_if<proto::ErrorMsg>(&*m)) throw ProtocolError("server error: " + err->message);
            }
        }
    } catch (const std::exception& e) {
        return fail(e.what());
    }

    Explorer explorer(script, *client, result);
    try {
        explorer.run();
    } catch (const ConnectionLost&) {
        explorer.finish();
        const auto why = client->failure();
        return fail(why ? *why : "server closed the connection");
    }
    result.bytes_received = client->bytes_received();
    result.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    client->close();
    return result;
}

std::string ExploreResult::to_json() const {
    json j;
    j["schema"] = "lodvol-explore-report/1";
    j["dataset"] = {{"id", dataset},
                    {"dims", meta.dims},
                    {"block_size", meta.block_size},
                    {"levels", meta.levels},
                    {"timesteps", meta.timesteps}};
    j["partial"] = partial;
    if (partial) j["failure"] = failure;
    j["settled"] = settled;
    json frames_json = json::array();
    for (const FrameRecord& f : frames) {
        frames_json.push_back(
            {{"added", f.added}, {"removed", f.removed}, {"reprioritized", f.reprioritized}, {"full_request", f.full_request}});
    }
    j["frames"] = frames_json;
    j["check_requests"] = check_requests;
    j["spec_versions"] = spec_versions;
    j["spec_changes"] = spec_versions > 0 ? spec_versions - 1 : 0;
    j["abort_acks"] = abort_acks;
    j["errors"] = errors;
    j["final_cut"] = {{"nodes", cut_nodes},
                      {"fresh", cut_fresh},
                      {"stale", cut_stale},
                      {"empty", cut_empty},
                      {"triangles", cut_triangles}};

    // everything below depends on wall-clock time or thread interleaving
    std::vector<double> latency, to_fresh, distance;
    json completions_json = json::array();
    for (const Completion& c : completions) {
        latency.push_back(c.latency_ms);
        to_fresh.push_back(double(c.frames_to_fresh));
        distance.push_back(c.distance);
        completions_json.push_back({{"node", node_json(c.node)},
                                    {"timestep", c.timestep},
                                    {"version", c.version},
                                    {"frame", c.frame},
                                    {"distance", c.distance},
                                    {"triangles", c.triangles},
                                    {"latency_ms", c.latency_ms},
                                    {"frames_to_fresh", c.frames_to_fresh}});
    }
    j["timing"] = {{"wall_seconds", wall_seconds},
                   {"settle_seconds", settle_seconds},
                   {"bytes_received", bytes_received},
                   {"triangles_received", triangles_received},
                   {"dropped_frames", dropped},
                   {"latency_ms", {{"median", median(latency)}, {"p95", percentile(latency, 0.95)}, {"max", percentile(latency, 1.0)}}},
                   {"frames_to_fresh", {{"median", median(to_fresh)}, {"max", percentile(to_fresh, 1.0)}}},
                   {"fresh_distance_median", median(distance)},
                   {"completions", completions_json}};
    return j.dump(2);
}

}  // namespace lodvol
