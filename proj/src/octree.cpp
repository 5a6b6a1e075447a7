#include "lodvol/octree.hpp"

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <mutex>

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include "json.hpp"
#include "lodvol/parallel.hpp"

namespace lodvol {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class File {
public:
    File(const fs::path& path, int flags) : path_(path) {
        fd_ = ::open(path.c_str(), flags | O_CLOEXEC, 0644);
        if (fd_ < 0) throw IoError("cannot open " + path.string() + ": " + std::strerror(errno));
    }
    ~File() {
        if (fd_ >= 0) ::close(fd_);
    }
    File(const File&) = delete;
    File& operator=(const File&) = delete;

    void pwrite_all(const void* data, std::size_t n, std::uint64_t offset) const {
        const auto* p = static_cast<const char*>(data);
        while (n > 0) {
            const ssize_t w = ::pwrite(fd_, p, n, static_cast<off_t>(offset));
            if (w < 0) {
                if (errno == EINTR) continue;
                throw IoError("write failed on " + path_.string() + ": " + std::strerror(errno));
            }
            p += w;
            n -= static_cast<std::size_t>(w);
            offset += static_cast<std::uint64_t>(w);
        }
    }

    void pread_all(void* data, std::size_t n, std::uint64_t offset) const {
        auto* p = static_cast<char*>(data);
        while (n > 0) {
            const ssize_t r = ::pread(fd_, p, n, static_cast<off_t>(offset));
            if (r < 0) {
                if (errno == EINTR) continue;
                throw IoError("read failed on " + path_.string() + ": " + std::strerror(errno));
            }
            if (r == 0) throw IoError("unexpected end of file in " + path_.string());
            p += r;
            n -= static_cast<std::size_t>(r);
            offset += static_cast<std::uint64_t>(r);
        }
    }

    std::uint64_t size() const {
        struct stat st {};
        if (::fstat(fd_, &st) != 0) throw IoError("cannot stat " + path_.string());
        return static_cast<std::uint64_t>(st.st_size);
    }

    void sync() const {
        if (::fsync(fd_) != 0) throw IoError("fsync failed on " + path_.string() + ": " + std::strerror(errno));
    }

private:
    fs::path path_;
    int fd_ = -1;
};

std::uint64_t header_bytes(const DatasetMeta& meta) {
    return sizeof(kStoreMagic) + 8u * total_node_count(meta.blocks());
}

json meta_to_json(const DatasetMeta& meta, const std::string& id) {
    json j;
    j["format"] = "STR1";
    j["id"] = id;
    j["dims"] = {meta.dims[0], meta.dims[1], meta.dims[2]};
    j["spacing"] = {meta.spacing.x, meta.spacing.y, meta.spacing.z};
    j["origin"] = {meta.origin.x, meta.origin.y, meta.origin.z};
    j["block_size"] = meta.block_size;
    j["fields"] = meta.fields;
    j["timesteps"] = meta.timesteps;
    j["levels"] = meta.levels;
    return j;
}

void write_u64_le(unsigned char* out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out[i] = static_cast<unsigned char>(v >> (8 * i));
}

std::uint64_t read_u64_le(const unsigned char* in) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{in[i]} << (8 * i);
    return v;
}

}  // namespace

BlockData build_leaf(const GridTimestep& grid, const DatasetMeta& meta, const NodeId& node, std::uint32_t timestep) {
    if (node.level != 0 || !meta.is_valid(node)) throw Error("build_leaf: invalid leaf " + node.to_string());
    if (grid.dims() != meta.dims || grid.field_count() != meta.fields.size()) {
        throw Error("build_leaf: grid does not match dataset meta");
    }
    const std::uint32_t b = meta.block_size;
    BlockData block(node, timestep, b, static_cast<std::uint32_t>(meta.fields.size()));
    const std::size_t s = block.side();
    std::vector<std::uint32_t> gx(s), gy(s), gz(s);
    for (std::size_t i = 0; i < s; ++i) {
        gx[i] = std::min<std::uint32_t>(node.ix * b + static_cast<std::uint32_t>(i), meta.dims[0] - 1);
        gy[i] = std::min<std::uint32_t>(node.iy * b + static_cast<std::uint32_t>(i), meta.dims[1] - 1);
        gz[i] = std::min<std::uint32_t>(node.iz * b + static_cast<std::uint32_t>(i), meta.dims[2] - 1);
    }
    for (std::size_t f = 0; f < meta.fields.size(); ++f) {
        auto out = block.field(f);
        std::size_t k = 0;
        for (std::size_t z = 0; z < s; ++z) {
            for (std::size_t y = 0; y < s; ++y) {
                for (std::size_t x = 0; x < s; ++x) out[k++] = grid.at(f, gx[x], gy[y], gz[z]);
            }
        }
    }
    return block;
}

BlockData downsample(std::span<const BlockData> children, const NodeId& parent, const DatasetMeta& meta) {
    if (parent.level == 0 || !meta.is_valid(parent)) throw Error("downsample: invalid parent " + parent.to_string());
    const std::vector<NodeId> expected = meta.children(parent);
    if (children.size() != expected.size()) {
        throw Error("downsample: parent " + parent.to_string() + " expects " + std::to_string(expected.size()) +
                    " children, got " + std::to_string(children.size()));
    }
    const std::uint32_t b = meta.block_size;
    const auto field_count = static_cast<std::uint32_t>(meta.fields.size());
    // slot = dx + 2 dy + 4 dz
    std::array<const BlockData*, 8> slot{};
    for (const BlockData& c : children) {
        if (std::find(expected.begin(), expected.end(), c.node) == expected.end()) {
            throw Error("downsample: " + c.node.to_string() + " is not a child of " + parent.to_string());
        }
        if (c.block_size != b || c.field_count != field_count || c.samples.size() != field_count * c.samples_per_field()) {
            throw Error("downsample: child " + c.node.to_string() + " has the wrong payload shape");
        }
        const int idx = (c.node.ix & 1) + 2 * (c.node.iy & 1) + 4 * (c.node.iz & 1);
        if (slot[idx]) throw Error("downsample: duplicate child " + c.node.to_string());
        slot[idx] = &c;
    }

    const Dims3 child_counts = meta.nodes_at(parent.level - 1u);
    const std::size_t s = b + 1u;
    // per axis: which child half and which sample inside it
    std::array<std::vector<std::uint32_t>, 3> half, sample;
    for (std::size_t a = 0; a < 3; ++a) {
        half[a].resize(s);
        sample[a].resize(s);
        const bool has_high = 2u * parent.coord(a) + 1u < child_counts[a];
        for (std::uint32_t x = 0; x < s; ++x) {
            const std::uint32_t d = 2u * x;
            std::uint32_t c = std::min<std::uint32_t>(d / b, 1u);
            std::uint32_t within = d - c * b;
            if (c == 1u && !has_high) {
                c = 0;
                within = b;
            }
            half[a][x] = c;
            sample[a][x] = within;
        }
    }

    BlockData out(parent, children.empty() ? 0 : children.front().timestep, b, field_count);
    for (std::size_t f = 0; f < field_count; ++f) {
        auto dst = out.field(f);
        std::size_t k = 0;
        for (std::size_t z = 0; z < s; ++z) {
            for (std::size_t y = 0; y < s; ++y) {
                for (std::size_t x = 0; x < s; ++x) {
                    const BlockData* c = slot[half[0][x] + 2u * half[1][y] + 4u * half[2][z]];
                    dst[k++] = c->at(f, sample[0][x], sample[1][y], sample[2][z]);
                }
            }
        }
    }
    return out;
}

double overhead_ratio_for_blocks(const Dims3& blocks) {
    const std::uint64_t leaves = std::uint64_t{blocks[0]} * blocks[1] * blocks[2];
    const std::uint64_t inner = total_node_count(blocks) - leaves;
    return static_cast<double>(inner) / static_cast<double>(leaves);
}

double overhead_ratio(const Dims3& dims, std::uint32_t block_size) {
    return overhead_ratio_for_blocks(partition_dims(dims, block_size));
}

std::uint64_t node_ordinal(const NodeId& node, const DatasetMeta& meta) {
    if (!meta.is_valid(node)) throw Error("invalid node " + node.to_string());
    std::uint64_t base = 0;
    for (std::uint32_t l = 0; l < node.level; ++l) {
        const Dims3 n = meta.nodes_at(l);
        base += std::uint64_t{n[0]} * n[1] * n[2];
    }
    const Dims3 n = meta.nodes_at(node.level);
    return base + node.ix + std::uint64_t{n[0]} * (node.iy + std::uint64_t{n[1]} * node.iz);
}

fs::path store_timestep_path(const fs::path& root, std::uint32_t timestep) {
    return root / ("t" + std::to_string(timestep) + ".oct");
}

fs::path store_incomplete_marker(const fs::path& root, std::uint32_t timestep) {
    return root / ("t" + std::to_string(timestep) + ".oct.incomplete");
}

struct OctreeStore::Impl {
    fs::path root;
    std::string id;
    DatasetMeta meta;
    std::vector<std::unique_ptr<File>> files;
    std::vector<std::vector<std::uint64_t>> index;
    mutable std::atomic<std::uint64_t> reads{0};
};

OctreeStore OctreeStore::open(const fs::path& root) {
    auto impl = std::make_shared<Impl>();
    impl->root = root;
    std::ifstream in(root / "store.json");
    if (!in) throw IoError("no octree store at " + root.string() + " (store.json missing)");
    try {
        json j;
        in >> j;
        if (j.at("format").get<std::string>() != "STR1") throw IoError("unsupported store format");
        Dims3 dims{};
        for (std::size_t a = 0; a < 3; ++a) dims[a] = j.at("dims").at(a).get<std::uint32_t>();
        const auto& sp = j.at("spacing");
        const auto& org = j.at("origin");
        impl->meta = DatasetMeta::make(dims, Vec3{sp[0].get<double>(), sp[1].get<double>(), sp[2].get<double>()},
                                       Vec3{org[0].get<double>(), org[1].get<double>(), org[2].get<double>()},
                                       j.at("block_size").get<std::uint32_t>(),
                                       j.at("fields").get<std::vector<std::string>>(),
                                       j.at("timesteps").get<std::uint32_t>());
        if (impl->meta.levels != j.at("levels").get<std::uint32_t>()) throw IoError("store.json level count mismatch");
        impl->id = j.value("id", root.filename().string());
    } catch (const json::exception& e) {
        throw IoError("malformed store.json in " + root.string() + ": " + e.what());
    }

    const DatasetMeta& meta = impl->meta;
    const std::uint64_t nodes = total_node_count(meta.blocks());
    const std::uint64_t header = header_bytes(meta);
    for (std::uint32_t t = 0; t < meta.timesteps; ++t) {
        if (fs::exists(store_incomplete_marker(root, t))) {
            throw IoError("timestep " + std::to_string(t) + " of " + root.string() + " is incomplete");
        }
        auto file = std::make_unique<File>(store_timestep_path(root, t), O_RDONLY);
        std::vector<unsigned char> head(header);
        file->pread_all(head.data(), head.size(), 0);
        if (std::memcmp(head.data(), kStoreMagic, sizeof(kStoreMagic)) != 0) {
            throw IoError("bad magic in " + store_timestep_path(root, t).string());
        }
        std::vector<std::uint64_t> offsets(nodes);
        const std::uint64_t size = file->size();
        for (std::uint64_t k = 0; k < nodes; ++k) {
            offsets[k] = read_u64_le(head.data() + sizeof(kStoreMagic) + 8u * k);
            if (offsets[k] < header || offsets[k] + meta.payload_bytes() > size) {
                throw IoError("corrupt node index in " + store_timestep_path(root, t).string());
            }
        }
        impl->files.push_back(std::move(file));
        impl->index.push_back(std::move(offsets));
    }
    OctreeStore store;
    store.impl_ = std::move(impl);
    return store;
}

const DatasetMeta& OctreeStore::meta() const { return impl_->meta; }
const std::string& OctreeStore::id() const { return impl_->id; }
const fs::path& OctreeStore::root() const { return impl_->root; }
std::uint64_t OctreeStore::read_count() const { return impl_->reads.load(); }

std::span<const std::uint64_t> OctreeStore::index(std::uint32_t timestep) const {
    if (timestep >= impl_->meta.timesteps) throw Error("timestep out of range");
    return impl_->index[timestep];
}

BlockData OctreeStore::read(std::uint32_t timestep, const NodeId& node) const {
    const DatasetMeta& meta = impl_->meta;
    if (timestep >= meta.timesteps) throw Error("timestep " + std::to_string(timestep) + " out of range");
    if (!meta.is_valid(node)) throw Error("invalid node " + node.to_string());
    BlockData block(node, timestep, meta.block_size, static_cast<std::uint32_t>(meta.fields.size()));
    const std::uint64_t offset = impl_->index[timestep][node_ordinal(node, meta)];
    try {
        impl_->files[timestep]->pread_all(block.samples.data(), block.byte_size(), offset);
    } catch (const IoError& e) {
        throw IoError("node " + node.to_string() + " t=" + std::to_string(timestep) + ": " + e.what());
    }
    impl_->reads.fetch_add(1);
    return block;
}

OctreeStore build_octree(const fs::path& raw_dir, const fs::path& out_dir, const BuildOptions& options) {
    const RawInfo info = read_raw_info(raw_dir);
    const DatasetMeta meta =
        DatasetMeta::make(info.dims, info.spacing, info.origin, options.block_size, info.fields, info.timesteps);
    fs::create_directories(out_dir);
    const fs::path store_json = out_dir / "store.json";
    fs::remove(store_json);

    const std::uint64_t header = header_bytes(meta);
    const std::uint64_t payload = meta.payload_bytes();
    const std::uint64_t nodes = total_node_count(meta.blocks());

    std::vector<unsigned char> head(header);
    std::memcpy(head.data(), kStoreMagic, sizeof(kStoreMagic));
    for (std::uint64_t k = 0; k < nodes; ++k) write_u64_le(head.data() + sizeof(kStoreMagic) + 8u * k, header + k * payload);

    for (std::uint32_t t = 0; t < meta.timesteps; ++t) {
        const fs::path marker = store_incomplete_marker(out_dir, t);
        std::ofstream(marker) << "building\n";
        const GridTimestep grid = GridTimestep::open(raw_dir, info, t);
        File file(store_timestep_path(out_dir, t), O_RDWR | O_CREAT | O_TRUNC);
        file.pwrite_all(head.data(), head.size(), 0);

        const auto offset_of = [&](const NodeId& n) { return header + node_ordinal(n, meta) * payload; };

        const std::vector<NodeId> leaves = meta.level_nodes(0);
        parallel_for(leaves.size(), options.threads, [&](std::size_t i) {
            const BlockData block = build_leaf(grid, meta, leaves[i], t);
            file.pwrite_all(block.samples.data(), block.byte_size(), offset_of(block.node));
        });

        for (std::uint32_t level = 1; level < meta.levels; ++level) {
            const std::vector<NodeId> parents = meta.level_nodes(level);
            parallel_for(parents.size(), options.threads, [&](std::size_t i) {
                std::vector<BlockData> children;
                for (const NodeId& c : meta.children(parents[i])) {
                    BlockData child(c, t, meta.block_size, static_cast<std::uint32_t>(meta.fields.size()));
                    file.pread_all(child.samples.data(), child.byte_size(), offset_of(c));
                    children.push_back(std::move(child));
                }
                const BlockData block = downsample(children, parents[i], meta);
                file.pwrite_all(block.samples.data(), block.byte_size(), offset_of(block.node));
            });
        }
        file.sync();
        fs::remove(marker);
    }

    const fs::path tmp = out_dir / "store.json.tmp";
    {
        std::ofstream out(tmp);
        const fs::path named = out_dir.has_filename() ? out_dir : out_dir.parent_path();
        out << meta_to_json(meta, options.id.empty() ? named.filename().string() : options.id).dump(2) << '\n';
        if (!out) throw IoError("cannot write " + tmp.string());
    }
    fs::rename(tmp, store_json);
    return OctreeStore::open(out_dir);
}

}  // namespace lodvol
