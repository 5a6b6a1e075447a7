#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <list>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "lodvol/net.hpp"
#include "lodvol/scheduler.hpp"

namespace lodvol {

struct ServerConfig {
    std::filesystem::path store;
    std::string listen = "127.0.0.1:7878";
    unsigned workers = 0;  // 0: hardware concurrency
    std::size_t cache_bytes = std::size_t{512} << 20;
    std::chrono::milliseconds worker_delay{0};
    std::chrono::milliseconds stats_interval{250};
    std::filesystem::path web_root;  // optional static files for browser clients
};

/// Overrides fields from LODVOL_STORE, LODVOL_LISTEN, LODVOL_WORKERS and LODVOL_CACHE_BYTES.
void apply_environment(ServerConfig& config);

struct ServerStats {
    std::uint64_t sessions_opened = 0;
    std::uint64_t sessions_active = 0;
    std::uint64_t protocol_errors = 0;
};

/// Extraction service over framed TCP and WebSocket on one port.
class Server {
public:
    explicit Server(ServerConfig config);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Binds the listener and starts accepting in the background.
    void start();
    std::uint16_t port() const { return port_; }
    /// Blocks until stop() is called from another thread.
    void wait();
    void stop();

    const OctreeStore& store() const { return store_; }
    ServerStats stats() const;
    const WorkerPool& pool() const { return *pool_; }

    class Session;

private:
    void accept_loop();
    void reap(bool all);

    ServerConfig config_;
    OctreeStore store_;
    std::shared_ptr<BlockCache> cache_;
    std::unique_ptr<WorkerPool> pool_;
    net::Socket listener_;
    std::uint16_t port_ = 0;
    std::thread acceptor_;
    std::atomic<bool> stopping_{false};
    mutable std::mutex mutex_;
    std::condition_variable stopped_;
    std::list<std::shared_ptr<Session>> sessions_;
    std::atomic<std::uint64_t> opened_{0};
    std::atomic<std::uint64_t> protocol_errors_{0};

    friend class Session;
};

}  // namespace lodvol
