#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lodvol/core.hpp"
#include "lodvol/raw.hpp"

namespace lodvol {

struct Blob {
    Vec3 center{};
    double radius = 1.0;
    double amplitude = 1.0;
    Vec3 drift{};  // world units per second of simulation time
};

struct Wind {
    enum class Kind { constant, rotation };
    Kind kind = Kind::constant;
    Vec3 value{};               // constant wind
    Vec3 center{};              // rotation about the z axis through center
    double angular_velocity = 0.0;

    Vec3 at(Vec3 p) const;
};

/// Desk-scale stand-in dataset: Gaussian blobs in field "q" plus a wind field u, v, w.
struct SynthSpec {
    Dims3 dims{32, 32, 32};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{};
    std::uint32_t timesteps = 1;
    double dt = 1.0;  // simulation seconds between timesteps
    std::vector<Blob> blobs;
    Wind wind;

    void validate() const;
    RawInfo raw_info() const;
    /// q(x, t) = sum_blobs amplitude * exp(-|x - (center + drift t)|^2 / radius^2)
    double q(Vec3 p, std::uint32_t timestep) const;
    Vec3 world(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
        return origin + Vec3{spacing.x * x, spacing.y * y, spacing.z * z};
    }

    static SynthSpec from_json_text(const std::string& text);
    static SynthSpec load(const std::filesystem::path& path);
    std::string to_json_text() const;
};

/// Writes the dataset in the raw input format. Deterministic for a given spec.
void synth_generate(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace lodvol
