#include "lodvol/synth.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace lodvol {

using nlohmann::json;

namespace {

Vec3 vec3_from(const json& j) { return Vec3{j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }
json vec3_to(Vec3 v) { return json::array({v.x, v.y, v.z}); }

}  // namespace

Vec3 Wind::at(Vec3 p) const {
    if (kind == Kind::constant) return value;
    return Vec3{-angular_velocity * (p.y - center.y), angular_velocity * (p.x - center.x), 0.0};
}

void SynthSpec::validate() const {
    for (auto d : dims) {
        if (d < 8) throw Error("synthetic datasets need at least 8 samples per axis");
    }
    for (std::size_t a = 0; a < 3; ++a) {
        if (!(spacing[a] > 0.0)) throw Error("spacing must be positive");
    }
    if (timesteps < 1) throw Error("at least one timestep required");
    for (const Blob& b : blobs) {
        if (!(b.radius > 0.0)) throw Error("blob radius must be positive");
    }
}

RawInfo SynthSpec::raw_info() const {
    return RawInfo{dims, spacing, origin, {"q", "u", "v", "w"}, timesteps};
}

double SynthSpec::q(Vec3 p, std::uint32_t timestep) const {
    const double t = dt * timestep;
    double sum = 0.0;
    for (const Blob& b : blobs) {
        const Vec3 d = p - (b.center + b.drift * t);
        sum += b.amplitude * std::exp(-dot(d, d) / (b.radius * b.radius));
    }
    return sum;
}

SynthSpec SynthSpec::from_json_text(const std::string& text) {
    SynthSpec spec;
    try {
        const json j = json::parse(text);
        for (std::size_t a = 0; a < 3; ++a) spec.dims[a] = j.at("dims").at(a).get<std::uint32_t>();
        if (j.contains("spacing")) spec.spacing = vec3_from(j["spacing"]);
        if (j.contains("origin")) spec.origin = vec3_from(j["origin"]);
        spec.timesteps = j.value("timesteps", 1u);
        spec.dt = j.value("dt", 1.0);
        for (const auto& b : j.value("blobs", json::array())) {
            Blob blob;
            blob.center = vec3_from(b.at("center"));
            blob.radius = b.at("radius").get<double>();
            blob.amplitude = b.value("amplitude", 1.0);
            if (b.contains("drift")) blob.drift = vec3_from(b["drift"]);
            spec.blobs.push_back(blob);
        }
        if (j.contains("wind")) {
            const auto& w = j["wind"];
            const std::string type = w.value("type", "constant");
            if (type == "constant") {
                spec.wind.kind = Wind::Kind::constant;
                spec.wind.value = vec3_from(w.at("value"));
            } else if (type == "rotation") {
                spec.wind.kind = Wind::Kind::rotation;
                spec.wind.center = vec3_from(w.at("center"));
                spec.wind.angular_velocity = w.at("angular_velocity").get<double>();
            } else {
                throw Error("unknown wind type '" + type + "'");
            }
        }
    } catch (const json::exception& e) {
        throw Error(std::string("malformed synth spec: ") + e.what());
    }
    spec.validate();
    return spec;
}

SynthSpec SynthSpec::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

std::string SynthSpec::to_json_text() const {
    json j;
    j["dims"] = {dims[0], dims[1], dims[2]};
    j["spacing"] = vec3_to(spacing);
    j["origin"] = vec3_to(origin);
    j["timesteps"] = timesteps;
    j["dt"] = dt;
    j["blobs"] = json::array();
    for (const Blob& b : blobs) {
        j["blobs"].push_back({{"center", vec3_to(b.center)},
                              {"radius", b.radius},
                              {"amplitude", b.amplitude},
                              {"drift", vec3_to(b.drift)}});
    }
    if (wind.kind == Wind::Kind::constant) {
        j["wind"] = {{"type", "constant"}, {"value", vec3_to(wind.value)}};
    } else {
        j["wind"] = {{"type", "rotation"}, {"center", vec3_to(wind.center)}, {"angular_velocity", wind.angular_velocity}};
    }
    return j.dump(2);
}

void synth_generate(const SynthSpec& spec, const std::filesystem::path& out_dir) {
    spec.validate();
    const RawInfo info = spec.raw_info();
    write_raw_info(out_dir, info);
    const std::size_t n = info.sample_count();
    std::vector<float> q(n), u(n), v(n), w(n);
    for (std::uint32_t t = 0; t < spec.timesteps; ++t) {
        std::size_t k = 0;
        for (std::uint32_t z = 0; z < spec.dims[2]; ++z) {
            for (std::uint32_t y = 0; y < spec.dims[1]; ++y) {
                for (std::uint32_t x = 0; x < spec.dims[0]; ++x, ++k) {
                    const Vec3 p = spec.world(x, y, z);
                    q[k] = static_cast<float>(spec.q(p, t));
                    const Vec3 wind = spec.wind.at(p);
                    u[k] = static_cast<float>(wind.x);
                    v[k] = static_cast<float>(wind.y);
                    w[k] = static_cast<float>(wind.z);
                }
            }
        }
        write_raw_field(out_dir, t, "q", q);
        write_raw_field(out_dir, t, "u", u);
        write_raw_field(out_dir, t, "v", v);
        write_raw_field(out_dir, t, "w", w);
    }
}

}  // namespace lodvol
