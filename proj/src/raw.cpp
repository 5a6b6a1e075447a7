#include "lodvol/raw.hpp"

#include <bit>
#include <cerrno>
#include <cstring>
#include <fstream>

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little, "raw and store formats assume a little-endian host");

namespace lodvol {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Vec3 vec3_from(const json& j) { return Vec3{j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

}  // namespace

RawInfo read_raw_info(const fs::path& dir) {
    std::ifstream in(dir / "meta.json");
    if (!in) throw IoError("cannot open " + (dir / "meta.json").string());
    json j;
    try {
        in >> j;
        RawInfo info;
        for (std::size_t a = 0; a < 3; ++a) info.dims[a] = j.at("dims").at(a).get<std::uint32_t>();
        info.spacing = vec3_from(j.at("spacing"));
        info.origin = j.contains("origin") ? vec3_from(j.at("origin")) : Vec3{};
        info.fields = j.at("fields").get<std::vector<std::string>>();
        info.timesteps = j.at("timesteps").get<std::uint32_t>();
        return info;
    } catch (const json::exception& e) {
        throw IoError("malformed " + (dir / "meta.json").string() + ": " + e.what());
    }
}

void write_raw_info(const fs::path& dir, const RawInfo& info) {
    fs::create_directories(dir);
    json j;
    j["dims"] = {info.dims[0], info.dims[1], info.dims[2]};
    j["spacing"] = {info.spacing.x, info.spacing.y, info.spacing.z};
    j["origin"] = {info.origin.x, info.origin.y, info.origin.z};
    j["fields"] = info.fields;
    j["timesteps"] = info.timesteps;
    std::ofstream out(dir / "meta.json");
    out << j.dump(2) << '\n';
    if (!out) throw IoError("cannot write " + (dir / "meta.json").string());
}

fs::path raw_field_path(const fs::path& dir, std::uint32_t timestep, std::string_view field) {
    return dir / ("t" + std::to_string(timestep) + "_" + std::string(field) + ".raw");
}

void write_raw_field(const fs::path& dir, std::uint32_t timestep, std::string_view field,
                     std::span<const float> values) {
    const fs::path path = raw_field_path(dir, timestep, field);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
    if (!out) throw IoError("cannot write " + path.string());
}

MappedFile::MappedFile(const fs::path& path) {
    const int fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
    if (fd < 0) throw IoError("cannot open " + path.string() + ": " + std::strerror(errno));
    struct stat st {};
    if (::fstat(fd, &st) != 0) {
        ::close(fd);
        throw IoError("cannot stat " + path.string());
    }
    size_ = static_cast<std::size_t>(st.st_size);
    if (size_ > 0) {
        data_ = ::mmap(nullptr, size_, PROT_READ, MAP_PRIVATE, fd, 0);
        if (data_ == MAP_FAILED) {
            data_ = nullptr;
            ::close(fd);
            throw IoError("cannot map " + path.string());
        }
    }
    ::close(fd);
}

MappedFile::~MappedFile() {
    if (data_) ::munmap(data_, size_);
}

GridTimestep GridTimestep::open(const fs::path& dir, const RawInfo& info, std::uint32_t timestep) {
    GridTimestep grid;
    grid.dims_ = info.dims;
    for (const auto& name : info.fields) {
        auto map = std::make_shared<MappedFile>(raw_field_path(dir, timestep, name));
        if (map->bytes().size() != info.sample_count() * sizeof(float)) {
            throw IoError("size mismatch in " + raw_field_path(dir, timestep, name).string());
        }
        grid.fields_.emplace_back(reinterpret_cast<const float*>(map->bytes().data()), info.sample_count());
        grid.maps_.push_back(std::move(map));
    }
    return grid;
}

GridTimestep GridTimestep::from_memory(const Dims3& dims, std::vector<std::vector<float>> fields) {
    GridTimestep grid;
    grid.dims_ = dims;
    grid.owned_ = std::make_shared<std::vector<std::vector<float>>>(std::move(fields));
    const std::size_t n = std::size_t{dims[0]} * dims[1] * dims[2];
    for (const auto& f : *grid.owned_) {
        if (f.size() != n) throw Error("field array size does not match dims");
        grid.fields_.emplace_back(f.data(), f.size());
    }
    return grid;
}

}  // namespace lodvol
