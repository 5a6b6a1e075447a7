#pragma once

#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>

#include "lodvol/core.hpp"

namespace lodvol {

/// LRU cache of node payloads bounded by resident bytes. Thread-safe; capacity 0 disables it.
class BlockCache {
public:
    using Key = std::pair<std::uint32_t, NodeId>;  // timestep, node
    using Loader = std::function<BlockData()>;

    explicit BlockCache(std::size_t capacity_bytes) : capacity_(capacity_bytes) {}

    std::shared_ptr<const BlockData> find(std::uint32_t timestep, const NodeId& node);
    void insert(std::shared_ptr<const BlockData> block);

    /// Cached block, or the loader's result (inserted when it fits). Misses run the loader
    /// without holding the lock, so concurrent misses on one key may both load.
    std::shared_ptr<const BlockData> get_or_load(std::uint32_t timestep, const NodeId& node, const Loader& load);

    std::size_t capacity() const { return capacity_; }
    std::size_t resident_bytes() const;
    std::size_t size() const;
    std::uint64_t hits() const;
    std::uint64_t misses() const;

private:
    struct Entry {
        std::shared_ptr<const BlockData> block;
        std::list<Key>::iterator lru;
    };

    const std::size_t capacity_;
    mutable std::mutex mutex_;
    std::map<Key, Entry> entries_;
    std::list<Key> lru_;  // front = most recent
    std::size_t resident_ = 0;
    std::uint64_t hits_ = 0;
    std::uint64_t misses_ = 0;
};

}  // namespace lodvol
