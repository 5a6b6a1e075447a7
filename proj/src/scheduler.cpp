#include "lodvol/scheduler.hpp"

#include "lodvol/extract.hpp"

namespace lodvol {

WorkQueue::WorkQueue(Emit emit, std::function<void()> on_ready)
    : emit_(std::move(emit)), on_ready_(std::move(on_ready)) {}

void WorkQueue::notify_ready() {
    if (on_ready_) on_ready_();
}

void WorkQueue::cancel_pending_locked() {
    order_.clear();
    pending_.clear();
}

void WorkQueue::flush_acks_locked() {
    while (!acks_.empty()) {
        const std::uint32_t v = acks_.front();
        if (!running_versions_.empty() && running_versions_.begin()->first < v) return;
        acks_.pop_front();
        if (!closed_) emit_(proto::encode(proto::AbortAck{v}));
    }
}

void WorkQueue::abort_all(std::shared_ptr<const SpecSet> specs) {
    {
        std::lock_guard lock(mutex_);
        if (closed_) return;
        if (specs->version <= version_) {
            throw ProtocolError("spec version " + std::to_string(specs->version) + " does not exceed " +
                                std::to_string(version_));
        }
        cancel_pending_locked();
        version_ = specs->version;
        specs_ = std::move(specs);
        acks_.push_back(version_);
        flush_acks_locked();
    }
    notify_ready();
}

bool WorkQueue::apply_delta(std::uint32_t version, std::uint32_t timestep, const CutDelta& delta) {
    bool added = false;
    {
        std::lock_guard lock(mutex_);
        if (closed_) return false;
        if (version < version_) {
            ++stale_deltas_;
            return false;
        }
        if (version > version_ || !specs_) {
            throw ProtocolError("cut delta for version " + std::to_string(version) + " before its SET_SPEC");
        }
        for (const PrioritizedNode& p : delta.added) {
            if (!(p.priority >= 0.0f) || !std::isfinite(p.priority)) throw ProtocolError("invalid priority");
            const WorkKey key{version, timestep, p.node};
            if (const auto r = running_.find(key); r != running_.end()) {
                r->second.suppressed = false;
                continue;
            }
            if (const auto it = pending_.find(key); it != pending_.end()) {
                order_.erase(Order{it->second, key});
                it->second = p.priority;
            } else {
                pending_.emplace(key, p.priority);
            }
            order_.insert(Order{p.priority, key});
            added = true;
        }
        for (const NodeId& n : delta.removed) {
            const WorkKey key{version, timestep, n};
            if (const auto it = pending_.find(key); it != pending_.end()) {
                order_.erase(Order{it->second, key});
                pending_.erase(it);
            } else if (const auto r = running_.find(key); r != running_.end()) {
                r->second.suppressed = true;
            }
        }
        for (const PrioritizedNode& p : delta.reprioritized) {
            if (!(p.priority >= 0.0f) || !std::isfinite(p.priority)) throw ProtocolError("invalid priority");
            const WorkKey key{version, timestep, p.node};
            if (const auto it = pending_.find(key); it != pending_.end()) {
                order_.erase(Order{it->second, key});
                it->second = p.priority;
                order_.insert(Order{p.priority, key});
            }
        }
    }
    if (added) notify_ready();
    return true;
}

std::optional<WorkItem> WorkQueue::try_pop() {
    std::lock_guard lock(mutex_);
    if (closed_ || !acks_.empty() || order_.empty()) return std::nullopt;
    const Order top = *order_.begin();
    order_.erase(order_.begin());
    pending_.erase(top.key);
    running_.emplace(top.key, Running{});
    ++running_versions_[top.key.version];
    return WorkItem{top.key, top.priority, specs_};
}

bool WorkQueue::finish(const WorkKey& key, std::vector<Frame> frames) {
    bool acked = false;
    bool delivered = false;
    {
        std::lock_guard lock(mutex_);
        const auto it = running_.find(key);
        if (it == running_.end()) return false;
        const bool suppressed = it->second.suppressed;
        running_.erase(it);
        if (const auto v = running_versions_.find(key.version); --v->second == 0) running_versions_.erase(v);

        delivered = !closed_ && !suppressed && key.version == version_;
        if (delivered) {
            for (Frame& f : frames) emit_(std::move(f));
            ++delivered_;
        } else {
            ++suppressed_;
        }
        const std::size_t before = acks_.size();
        flush_acks_locked();
        acked = acks_.size() != before;
    }
    if (acked) notify_ready();
    return delivered;
}

void WorkQueue::close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    cancel_pending_locked();
    acks_.clear();
}

std::uint32_t WorkQueue::current_version() const {
    std::lock_guard lock(mutex_);
    return version_;
}

QueueCounts WorkQueue::counts() const {
    std::lock_guard lock(mutex_);
    QueueCounts c;
    c.pending = static_cast<std::uint32_t>(pending_.size());
    c.running = static_cast<std::uint32_t>(running_.size());
    c.stale_deltas = stale_deltas_;
    c.delivered = delivered_;
    c.suppressed = suppressed_;
    return c;
}

std::size_t WorkQueue::pending_acks() const {
    std::lock_guard lock(mutex_);
    return acks_.size();
}

std::vector<Frame> process_item(const WorkItem& item, const OctreeStore& store, BlockCache& cache) {
    std::vector<Frame> frames;
    try {
        const auto block = cache.get_or_load(item.key.timestep, item.key.node,
                                             [&] { return store.read(item.key.timestep, item.key.node); });
        for (ResultMesh& mesh : extract_node(*block, store.meta(), *item.specs)) {
            frames.push_back(proto::encode(proto::ResultMeshMsg{std::move(mesh)}));
        }
        frames.push_back(proto::encode(proto::NodeDone{item.key}));
    } catch (const std::exception& e) {
        frames.clear();
        frames.push_back(
            proto::encode(proto::ErrorMsg{proto::ErrorCode::extraction_failed, item.key.to_string() + ": " + e.what()}));
    }
    return frames;
}

WorkerPool::WorkerPool(OctreeStore store, std::shared_ptr<BlockCache> cache, WorkerOptions options)
    : store_(std::move(store)), cache_(std::move(cache)), options_(options) {
    const unsigned n = std::max(1u, options_.threads);
    for (unsigned i = 0; i < n; ++i) threads_.emplace_back([this] { run(); });
}

WorkerPool::~WorkerPool() { stop(); }

void WorkerPool::stop() {
    {
        std::lock_guard lock(mutex_);
        if (stopping_ && threads_.empty()) return;
        stopping_ = true;
    }
    wake_.notify_all();
    for (auto& t : threads_) {
        if (t.joinable()) t.join();
    }
    threads_.clear();
}

void WorkerPool::attach(std::shared_ptr<WorkQueue> queue) {
    {
        std::lock_guard lock(mutex_);
        queues_.push_back(std::move(queue));
    }
    wake_.notify_all();
}

void WorkerPool::detach(const std::shared_ptr<WorkQueue>& queue) {
    std::lock_guard lock(mutex_);
    std::erase(queues_, queue);
}

void WorkerPool::notify() {
    {
        std::lock_guard lock(mutex_);
        ++generation_;
    }
    wake_.notify_all();
}

void WorkerPool::run() {
    std::unique_lock lock(mutex_);
    while (!stopping_) {
        std::optional<WorkItem> item;
        std::shared_ptr<WorkQueue> owner;
        for (std::size_t k = 0; k < queues_.size() && !item; ++k) {
            const std::size_t i = (next_ + k) % queues_.size();
            item = queues_[i]->try_pop();
            if (item) {
                owner = queues_[i];
                next_ = i + 1;
            }
        }
        if (!item) {
            const std::uint64_t seen = generation_;
            wake_.wait(lock, [&] { return stopping_ || generation_ != seen; });
            continue;
        }
        lock.unlock();
        if (options_.delay.count() > 0) std::this_thread::sleep_for(options_.delay);
        owner->finish(item->key, process_item(*item, store_, *cache_));
        ++processed_;
        lock.lock();
    }
}

}  // namespace lodvol
