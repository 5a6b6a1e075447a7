#pragma once

#include <chrono>
#include <memory>

#include "lodvol/server.hpp"
#include "test_util.hpp"

namespace lodvol::testing {

struct ServerSetup {
    Dims3 dims{33, 33, 33};
    std::uint32_t block_size = 8;
    std::uint32_t timesteps = 2;
    unsigned workers = 2;
    std::chrono::milliseconds delay{0};
    std::filesystem::path web_root;
};

/// Synthetic store plus a server on an ephemeral loopback port.
struct LiveServer {
    TempDir tmp;
    OctreeStore store;
    std::unique_ptr<Server> server;

    explicit LiveServer(const ServerSetup& setup) {
        store = synth_store(tmp.path(), setup.dims, setup.block_size, setup.timesteps);
        ServerConfig config;
        config.store = tmp.path() / "store";
        config.listen = "127.0.0.1:0";
        config.workers = setup.workers;
        config.cache_bytes = 1 << 22;
        config.worker_delay = setup.delay;
        config.stats_interval = std::chrono::milliseconds(20);
        config.web_root = setup.web_root;
        server = std::make_unique<Server>(config);
        server->start();
    }
    explicit LiveServer(std::chrono::milliseconds delay = std::chrono::milliseconds(0), std::filesystem::path web_root = {})
        : LiveServer(ServerSetup{.delay = delay, .web_root = std::move(web_root)}) {}

    net::Endpoint endpoint() const { return net::Endpoint{"127.0.0.1", server->port()}; }
};

}  // namespace lodvol::testing
