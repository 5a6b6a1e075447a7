#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <thread>
#include <vector>

#include "lodvol/cache.hpp"
#include "lodvol/octree.hpp"
#include "lodvol/protocol.hpp"

namespace lodvol {

using proto::WorkKey;
using Frame = std::vector<std::uint8_t>;

struct WorkItem {
    WorkKey key;
    float priority = 0.0f;
    std::shared_ptr<const SpecSet> specs;
};

struct QueueCounts {
    std::uint32_t pending = 0;
    std::uint32_t running = 0;
    std::uint64_t stale_deltas = 0;
    std::uint64_t delivered = 0;
    std::uint64_t suppressed = 0;
};

/// Per-session pending set with mutable priorities, cancellation and versioned aborts.
///
/// Pops return the maximal priority, ties by ascending NodeId then timestep. Frames leave
/// through `emit`, which is always invoked with the queue lock held, so results, errors and
/// ABORT_ACKs are serialized in one order. An ABORT_ACK(v) is emitted once no running item of
/// an older version remains; until then nothing new is popped, so it precedes every v result.
class WorkQueue {
public:
    using Emit = std::function<void(Frame)>;

    explicit WorkQueue(Emit emit, std::function<void()> on_ready = {});

    /// Installs a new spec set. Throws ProtocolError unless its version exceeds the current one.
    void abort_all(std::shared_ptr<const SpecSet> specs);

    /// Returns false (and counts it) when `version` is older than the current one. Throws
    /// ProtocolError for versions that were never announced or negative/NaN priorities.
    bool apply_delta(std::uint32_t version, std::uint32_t timestep, const CutDelta& delta);

    std::optional<WorkItem> try_pop();

    /// Reports completion of a popped item. The frames are emitted only when the item's version
    /// is still current and the node was not removed meanwhile; returns whether they were.
    bool finish(const WorkKey& key, std::vector<Frame> frames);

    /// Cancels everything; later completions are dropped and nothing is emitted any more.
    void close();

    std::uint32_t current_version() const;
    QueueCounts counts() const;
    std::size_t pending_acks() const;

private:
    struct Order {
        float priority;
        WorkKey key;
        bool operator<(const Order& o) const {
            if (priority != o.priority) return priority > o.priority;
            if (key.node != o.key.node) return key.node < o.key.node;
            if (key.timestep != o.key.timestep) return key.timestep < o.key.timestep;
            return key.version < o.key.version;
        }
    };
    struct Running {
        bool suppressed = false;
    };

    void flush_acks_locked();
    void cancel_pending_locked();
    void notify_ready();

    mutable std::mutex mutex_;
    Emit emit_;
    std::function<void()> on_ready_;
    std::set<Order> order_;
    std::map<WorkKey, float> pending_;
    std::map<WorkKey, Running> running_;
    std::map<std::uint32_t, std::size_t> running_versions_;
    std::deque<std::uint32_t> acks_;
    std::shared_ptr<const SpecSet> specs_;
    std::uint32_t version_ = 0;
    bool closed_ = false;
    std::uint64_t stale_deltas_ = 0;
    std::uint64_t delivered_ = 0;
    std::uint64_t suppressed_ = 0;
};

/// Result frames for one item: one RESULT_MESH per sub-volume and a NODE_DONE, or an
/// extraction-failure ERROR naming the key.
std::vector<Frame> process_item(const WorkItem& item, const OctreeStore& store, BlockCache& cache);

struct WorkerOptions {
    unsigned threads = 1;
    std::chrono::milliseconds delay{0};  // added per item; used to slow workers in tests
};

/// Workers shared by all sessions, visiting attached queues round-robin.
class WorkerPool {
public:
    WorkerPool(OctreeStore store, std::shared_ptr<BlockCache> cache, WorkerOptions options);
    ~WorkerPool();
    WorkerPool(const WorkerPool&) = delete;
    WorkerPool& operator=(const WorkerPool&) = delete;

    void attach(std::shared_ptr<WorkQueue> queue);
    void detach(const std::shared_ptr<WorkQueue>& queue);
    /// Wakes idle workers; queues call this after gaining poppable work.
    void notify();
    void stop();

    std::uint64_t processed() const { return processed_.load(); }
    const BlockCache& cache() const { return *cache_; }
    const OctreeStore& store() const { return store_; }

private:
    void run();

    OctreeStore store_;
    std::shared_ptr<BlockCache> cache_;
    WorkerOptions options_;
    std::mutex mutex_;
    std::condition_variable wake_;
    std::vector<std::shared_ptr<WorkQueue>> queues_;
    std::size_t next_ = 0;
    std::uint64_t generation_ = 0;
    bool stopping_ = false;
    std::atomic<std::uint64_t> processed_{0};
    std::vector<std::thread> threads_;
};

}  // namespace lodvol
