#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lodvol/core.hpp"

namespace lodvol {

/// Contents of a raw dataset's meta.json.
struct RawInfo {
    Dims3 dims{2, 2, 2};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{};
    std::vector<std::string> fields;
    std::uint32_t timesteps = 1;

    std::size_t sample_count() const { return std::size_t{dims[0]} * dims[1] * dims[2]; }
};

RawInfo read_raw_info(const std::filesystem::path& dir);
void write_raw_info(const std::filesystem::path& dir, const RawInfo& info);

/// `t{T}_{field}.raw` inside a raw dataset directory.
std::filesystem::path raw_field_path(const std::filesystem::path& dir, std::uint32_t timestep, std::string_view field);

/// Writes one field of one timestep as little-endian float32, x-fastest.
void write_raw_field(const std::filesystem::path& dir, std::uint32_t timestep, std::string_view field,
                     std::span<const float> values);

/// Read-only memory mapping of a whole file.
class MappedFile {
public:
    explicit MappedFile(const std::filesystem::path& path);
    ~MappedFile();
    MappedFile(const MappedFile&) = delete;
    MappedFile& operator=(const MappedFile&) = delete;

    std::span<const std::byte> bytes() const { return {static_cast<const std::byte*>(data_), size_}; }

private:
    void* data_ = nullptr;
    std::size_t size_ = 0;
};

/// All fields of one timestep of a rectilinear grid, addressed by sample index.
class GridTimestep {
public:
    /// Maps every field file of timestep `t` of a raw dataset.
    static GridTimestep open(const std::filesystem::path& dir, const RawInfo& info, std::uint32_t timestep);
    /// Wraps in-memory arrays (x-fastest, one per field).
    static GridTimestep from_memory(const Dims3& dims, std::vector<std::vector<float>> fields);

    const Dims3& dims() const { return dims_; }
    std::size_t field_count() const { return fields_.size(); }
    float at(std::size_t field, std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
        return fields_[field][x + std::size_t{dims_[0]} * (y + std::size_t{dims_[1]} * z)];
    }

private:
    Dims3 dims_{};
    std::vector<std::span<const float>> fields_;
    std::vector<std::shared_ptr<MappedFile>> maps_;
    std::shared_ptr<std::vector<std::vector<float>>> owned_;
};

}  // namespace lodvol
