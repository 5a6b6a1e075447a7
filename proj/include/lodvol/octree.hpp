#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lodvol/core.hpp"
#include "lodvol/raw.hpp"

namespace lodvol {

/// Copies the (b+1)^3 lattice of a leaf starting at (i*b, j*b, k*b); samples past the grid
/// border repeat the last sample.
BlockData build_leaf(const GridTimestep& grid, const DatasetMeta& meta, const NodeId& node, std::uint32_t timestep);

/// Stride-2 sub-sampling of up to eight children into their parent. Positions that fall
/// into missing (border) children are clamped to the last existing child sample.
BlockData downsample(std::span<const BlockData> children, const NodeId& parent, const DatasetMeta& meta);

/// Inner-node payload bytes over leaf payload bytes.
double overhead_ratio_for_blocks(const Dims3& blocks);
double overhead_ratio(const Dims3& dims, std::uint32_t block_size);

/// Position of a node in a timestep file's index (levels bottom-up, x-fastest within a level).
std::uint64_t node_ordinal(const NodeId& node, const DatasetMeta& meta);

inline constexpr char kStoreMagic[4] = {'S', 'T', 'R', '1'};

std::filesystem::path store_timestep_path(const std::filesystem::path& root, std::uint32_t timestep);
std::filesystem::path store_incomplete_marker(const std::filesystem::path& root, std::uint32_t timestep);

/// Read side of an on-disk octree. Cheap to copy; all copies share file handles and counters.
class OctreeStore {
public:
    static OctreeStore open(const std::filesystem::path& root);

    const DatasetMeta& meta() const;
    const std::string& id() const;
    const std::filesystem::path& root() const;

    /// Thread-safe positional read of one payload.
    BlockData read(std::uint32_t timestep, const NodeId& node) const;
    std::span<const std::uint64_t> index(std::uint32_t timestep) const;
    std::uint64_t read_count() const;

private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
};

struct BuildOptions {
    std::uint32_t block_size = 20;
    unsigned threads = 0;
    std::string id;  // defaults to the output directory name
};

/// Preprocesses a raw dataset into an octree store. Re-running overwrites deterministically.
/// While a timestep is being written a `t{T}.oct.incomplete` marker exists next to it.
OctreeStore build_octree(const std::filesystem::path& raw_dir, const std::filesystem::path& out_dir,
                         const BuildOptions& options);

}  // namespace lodvol
