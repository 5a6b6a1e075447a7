#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>

#include "lodvol/net.hpp"
#include "lodvol/protocol.hpp"

namespace lodvol {

/// Connection to an extraction server. A background thread decodes incoming frames into
/// an inbox that the owner drains at its own pace.
class BackendClient {
public:
    enum class Transport { tcp, websocket };

    static std::unique_ptr<BackendClient> connect(const net::Endpoint& endpoint, Transport transport = Transport::tcp);
    ~BackendClient();
    BackendClient(const BackendClient&) = delete;
    BackendClient& operator=(const BackendClient&) = delete;

    /// Returns false once the connection is gone.
    bool send(const proto::Message& message);
    bool send_raw(std::span<const std::uint8_t> frame);

    /// HELLO, then waits for DATASET_INFO. Throws on timeout, ERROR or disconnect.
    DatasetMeta hello(std::chrono::milliseconds timeout = std::chrono::seconds(10));

    std::optional<proto::Message> poll();
    std::optional<proto::Message> wait(std::chrono::milliseconds timeout);

    /// False once the server closed the stream and the inbox is drained.
    bool open() const;
    /// Why the stream ended, if it ended abnormally.
    std::optional<std::string> failure() const;
    std::uint64_t bytes_received() const;
    void close();

private:
    explicit BackendClient(std::unique_ptr<net::FrameChannel> channel);
    void run();

    std::unique_ptr<net::FrameChannel> channel_;
    mutable std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<proto::Message> inbox_;
    bool ended_ = false;
    std::optional<std::string> failure_;
    std::thread reader_;
};

}  // namespace lodvol
