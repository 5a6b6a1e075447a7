#include "lodvol/cache.hpp"

namespace lodvol {

std::shared_ptr<const BlockData> BlockCache::find(std::uint32_t timestep, const NodeId& node) {
    std::lock_guard lock(mutex_);
    const auto it = entries_.find(Key{timestep, node});
    if (it == entries_.end()) {
        ++misses_;
        return nullptr;
    }
    ++hits_;
    lru_.splice(lru_.begin(), lru_, it->second.lru);
    return it->second.block;
}

void BlockCache::insert(std::shared_ptr<const BlockData> block) {
    if (!block) return;
    const std::size_t bytes = block->byte_size();
    if (bytes > capacity_) return;
    std::lock_guard lock(mutex_);
    const Key key{block->timestep, block->node};
    if (const auto it = entries_.find(key); it != entries_.end()) {
        resident_ -= it->second.block->byte_size();
        lru_.erase(it->second.lru);
        entries_.erase(it);
    }
    while (resident_ + bytes > capacity_) {
        const auto victim = entries_.find(lru_.back());
        resident_ -= victim->second.block->byte_size();
        entries_.erase(victim);
        lru_.pop_back();
    }
    lru_.push_front(key);
    entries_.emplace(key, Entry{std::move(block), lru_.begin()});
    resident_ += bytes;
}

std::shared_ptr<const BlockData> BlockCache::get_or_load(std::uint32_t timestep, const NodeId& node,
                                                         const Loader& load) {
    if (auto hit = find(timestep, node)) return hit;
    auto block = std::make_shared<const BlockData>(load());
    insert(block);
    return block;
}

std::size_t BlockCache::resident_bytes() const {
    std::lock_guard lock(mutex_);
    return resident_;
}

std::size_t BlockCache::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

std::uint64_t BlockCache::hits() const {
    std::lock_guard lock(mutex_);
    return hits_;
}

std::uint64_t BlockCache::misses() const {
    std::lock_guard lock(mutex_);
    return misses_;
}

}  // namespace lodvol
