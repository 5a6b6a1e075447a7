#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lodvol/core.hpp"

namespace lodvol::net {

struct Endpoint {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;

    /// "host:port", or ":port" / "port" for all interfaces.
    static Endpoint parse(std::string_view text);
    std::string to_string() const { return host + ":" + std::to_string(port); }
};

/// Owned socket descriptor.
class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    Socket(Socket&& o) noexcept : fd_(o.release()) {}
    Socket& operator=(Socket&& o) noexcept;
    ~Socket() { reset(); }

    int fd() const { return fd_; }
    bool valid() const { return fd_ >= 0; }
    int release() {
        const int f = fd_;
        fd_ = -1;
        return f;
    }
    void reset();
    /// Shuts both directions down without closing, unblocking readers in other threads.
    void shutdown() const;

    /// Blocks until all bytes are written. Returns false once the peer is gone.
    bool write_all(std::span<const std::uint8_t> bytes) const;
    /// Reads exactly bytes.size(); false on orderly EOF before the first byte, throws on a
    /// truncated read or socket error.
    bool read_exact(std::span<std::uint8_t> bytes) const;
    /// Reads at most `max` bytes; empty on EOF.
    std::vector<std::uint8_t> read_some(std::size_t max) const;

private:
    int fd_ = -1;
};

Socket listen_tcp(const Endpoint& endpoint, int backlog = 64);
std::uint16_t local_port(const Socket& s);
Socket connect_tcp(const Endpoint& endpoint);

/// Bidirectional carrier of protocol frames. Reads happen on one thread, writes are
/// serialized internally.
class FrameChannel {
public:
    virtual ~FrameChannel() = default;
    /// Next complete frame including its header, or nullopt on orderly close.
    virtual std::optional<std::vector<std::uint8_t>> read_frame() = 0;
    virtual bool write_frame(std::span<const std::uint8_t> frame) = 0;
    /// Bytes received so far, including transport framing.
    virtual std::uint64_t bytes_read() const = 0;
    virtual void shutdown() = 0;
};

/// Frames back-to-back on a raw TCP stream.
std::unique_ptr<FrameChannel> tcp_channel(Socket socket);

/// One frame per binary WebSocket message. `client` masks outgoing messages.
std::unique_ptr<FrameChannel> websocket_channel(Socket socket, bool client, std::vector<std::uint8_t> already_read = {});

struct HttpRequest {
    std::string method;
    std::string target;
    std::map<std::string, std::string> headers;  // lower-cased names

    std::optional<std::string> header(const std::string& name) const;
};

/// Reads request head bytes up to the blank line. Anything read past it is returned in `rest`.
HttpRequest read_http_request(const Socket& s, std::vector<std::uint8_t>& rest);

std::string websocket_accept_key(const std::string& client_key);

/// Performs the client side of the upgrade on a connected socket.
std::unique_ptr<FrameChannel> websocket_connect(Socket socket, const std::string& host, const std::string& path = "/");

/// Writes the 101 response for a validated upgrade request.
bool websocket_accept(const Socket& s, const HttpRequest& request);

std::string mime_type(const std::string& path);

}  // namespace lodvol::net
