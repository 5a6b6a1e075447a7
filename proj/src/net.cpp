#include "lodvol/net.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <openssl/evp.h>
#include <openssl/sha.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <random>
#include <sstream>

#include "lodvol/protocol.hpp"

namespace lodvol::net {

namespace {

std::string sys_error(const std::string& what) { return what + ": " + std::strerror(errno); }

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return std::string(s);
}

std::string base64(std::span<const std::uint8_t> bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

void set_nodelay(int fd) {
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

class TcpChannel final : public FrameChannel {
public:
    explicit TcpChannel(Socket s) : socket_(std::move(s)) {}

    std::optional<std::vector<std::uint8_t>> read_frame() override {
        std::vector<std::uint8_t> frame(proto::kHeaderBytes);
        if (!socket_.read_exact(frame)) return std::nullopt;
        const std::uint32_t len = proto::payload_length(frame);
        frame.resize(proto::kHeaderBytes + len);
        if (len > 0 && !socket_.read_exact(std::span(frame).subspan(proto::kHeaderBytes))) {
            throw ProtocolError("connection closed inside a frame");
        }
        bytes_ += frame.size();
        return frame;
    }

    bool write_frame(std::span<const std::uint8_t> frame) override {
        std::lock_guard lock(write_mutex_);
        return socket_.write_all(frame);
    }

    std::uint64_t bytes_read() const override { return bytes_.load(); }
    void shutdown() override { socket_.shutdown(); }

private:
    Socket socket_;
    std::mutex write_mutex_;
    std::atomic<std::uint64_t> bytes_{0};
};

class WebSocketChannel final : public FrameChannel {
public:
    WebSocketChannel(Socket s, bool client, std::vector<std::uint8_t> pre)
        : socket_(std::move(s)), client_(client), pre_(std::move(pre)), rng_(std::random_device{}()) {}

    std::optional<std::vector<std::uint8_t>> read_frame() override {
        std::vector<std::uint8_t> message;
        bool in_message = false;
        for (;;) {
            std::uint8_t head[2];
            if (!read(head, !in_message)) return std::nullopt;
            const bool fin = head[0] & 0x80;
            const std::uint8_t opcode = head[0] & 0x0F;
            const bool masked = head[1] & 0x80;
            if (masked == client_) throw ProtocolError("websocket masking direction violated");
            std::uint64_t len = head[1] & 0x7F;
            if (len == 126) {
                std::uint8_t ext[2];
                read(ext, false);
                len = (std::uint64_t{ext[0]} << 8) | ext[1];
            } else if (len == 127) {
                std::uint8_t ext[8];
                read(ext, false);
                len = 0;
                for (std::uint8_t b : ext) len = (len << 8) | b;
            }
            std::uint8_t mask[4] = {0, 0, 0, 0};
            if (masked) read(mask, false);
            if (len > proto::kMaxPayload + proto::kHeaderBytes || message.size() + len > proto::kMaxPayload + 64) {
                throw ProtocolError("websocket message too large");
            }
            std::vector<std::uint8_t> payload(len);
            if (len > 0) read(payload, false);
            for (std::size_t i = 0; i < payload.size(); ++i) payload[i] ^= mask[i % 4];

            if (opcode >= 0x8) {
                if (!fin || len > 125) throw ProtocolError("invalid websocket control frame");
                if (opcode == 0x8) {
                    send(0x8, payload);
                    return std::nullopt;
                }
                if (opcode == 0x9) send(0xA, payload);
                continue;
            }
            if (opcode == 0x1) throw ProtocolError("text websocket messages are not part of the protocol");
            if (opcode == 0x2) {
                if (in_message) throw ProtocolError("websocket message interleaved");
                in_message = true;
            } else if (opcode != 0x0 || !in_message) {
                throw ProtocolError("unexpected websocket opcode " + std::to_string(opcode));
            }
            message.insert(message.end(), payload.begin(), payload.end());
            if (!fin) continue;
            if (message.size() < proto::kHeaderBytes ||
                proto::payload_length(message) + proto::kHeaderBytes != message.size()) {
                throw ProtocolError("websocket message must carry exactly one frame");
            }
            return message;
        }
    }

    bool write_frame(std::span<const std::uint8_t> frame) override { return send(0x2, frame); }

    std::uint64_t bytes_read() const override { return bytes_.load(); }

    void shutdown() override {
        send(0x8, {});
        socket_.shutdown();
    }

private:
    bool read(std::span<std::uint8_t> out, bool eof_ok) {
        std::size_t got = 0;
        while (got < out.size() && pre_pos_ < pre_.size()) out[got++] = pre_[pre_pos_++];
        if (got < out.size()) {
            const bool ok = socket_.read_exact(out.subspan(got));
            if (!ok) {
                if (eof_ok && got == 0) return false;
                throw ProtocolError("connection closed inside a websocket frame");
            }
        }
        bytes_ += out.size();
        return true;
    }

    bool send(std::uint8_t opcode, std::span<const std::uint8_t> payload) {
        std::lock_guard lock(write_mutex_);
        if (closed_) return false;
        if (opcode == 0x8) closed_ = true;
        std::vector<std::uint8_t> out;
        out.reserve(payload.size() + 14);
        out.push_back(static_cast<std::uint8_t>(0x80 | opcode));
        const std::uint8_t mask_bit = client_ ? 0x80 : 0x00;
        const std::uint64_t n = payload.size();
        if (n < 126) {
            out.push_back(static_cast<std::uint8_t>(mask_bit | n));
        } else if (n <= 0xFFFF) {
            out.push_back(mask_bit | 126);
            out.push_back(static_cast<std::uint8_t>(n >> 8));
            out.push_back(static_cast<std::uint8_t>(n));
        } else {
            out.push_back(mask_bit | 127);
            for (int s = 56; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(n >> s));
        }
        std::uint8_t mask[4] = {0, 0, 0, 0};
        if (client_) {
            const std::uint32_t m = static_cast<std::uint32_t>(rng_());
            std::memcpy(mask, &m, 4);
            out.insert(out.end(), mask, mask + 4);
        }
        const std::size_t start = out.size();
        out.insert(out.end(), payload.begin(), payload.end());
        if (client_) {
            for (std::size_t i = 0; i < n; ++i) out[start + i] ^= mask[i % 4];
        }
        return socket_.write_all(out);
    }

    Socket socket_;
    bool client_;
    std::vector<std::uint8_t> pre_;
    std::size_t pre_pos_ = 0;
    std::mutex write_mutex_;
    bool closed_ = false;
    std::mt19937 rng_;
    std::atomic<std::uint64_t> bytes_{0};
};

}  // namespace

Endpoint Endpoint::parse(std::string_view text) {
    Endpoint e;
    const auto colon = text.rfind(':');
    std::string_view port = text;
    if (colon != std::string_view::npos) {
        e.host = std::string(text.substr(0, colon));
        port = text.substr(colon + 1);
        if (e.host.empty()) e.host = "0.0.0.0";
    } else {
        e.host = "0.0.0.0";
    }
    unsigned long p = 0;
    try {
        std::size_t used = 0;
        p = std::stoul(std::string(port), &used);
        if (used != port.size()) throw std::invalid_argument("port");
    } catch (const std::exception&) {
        throw Error("invalid endpoint '" + std::string(text) + "'");
    }
    if (p > 65535) throw Error("port out of range in '" + std::string(text) + "'");
    e.port = static_cast<std::uint16_t>(p);
    return e;
}

Socket& Socket::operator=(Socket&& o) noexcept {
    if (this != &o) {
        reset();
        fd_ = o.release();
    }
    return *this;
}

void Socket::reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
}

void Socket::shutdown() const {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

bool Socket::write_all(std::span<const std::uint8_t> bytes) const {
    std::size_t done = 0;
    while (done < bytes.size()) {
        const ssize_t n = ::send(fd_, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        done += static_cast<std::size_t>(n);
    }
    return true;
}

bool Socket::read_exact(std::span<std::uint8_t> bytes) const {
    std::size_t done = 0;
    while (done < bytes.size()) {
        const ssize_t n = ::recv(fd_, bytes.data() + done, bytes.size() - done, 0);
        if (n < 0) {
            if (errno == EINTR) continue;
            if (done == 0 && (errno == ECONNRESET || errno == ENOTCONN || errno == EBADF)) return false;
            throw IoError(sys_error("socket read"));
        }
        if (n == 0) {
            if (done == 0) return false;
            throw ProtocolError("connection closed mid-message");
        }
        done += static_cast<std::size_t>(n);
    }
    return true;
}

std::vector<std::uint8_t> Socket::read_some(std::size_t max) const {
    std::vector<std::uint8_t> buf(max);
    for (;;) {
        const ssize_t n = ::recv(fd_, buf.data(), buf.size(), 0);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) return {};
        buf.resize(static_cast<std::size_t>(n));
        return buf;
    }
}

namespace {

sockaddr_in resolve(const Endpoint& e) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(e.port);
    if (::inet_pton(AF_INET, e.host.c_str(), &addr.sin_addr) == 1) return addr;
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(e.host.c_str(), nullptr, &hints, &res) != 0 || !res) {
        throw IoError("cannot resolve host '" + e.host + "'");
    }
    addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    ::freeaddrinfo(res);
    return addr;
}

}  // namespace

Socket listen_tcp(const Endpoint& endpoint, int backlog) {
    Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!s.valid()) throw IoError(sys_error("socket"));
    int one = 1;
    ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    const sockaddr_in addr = resolve(endpoint);
    if (::bind(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
        throw IoError(sys_error("bind " + endpoint.to_string()));
    }
    if (::listen(s.fd(), backlog) != 0) throw IoError(sys_error("listen"));
    return s;
}

std::uint16_t local_port(const Socket& s) {
    sockaddr_in addr{};
    socklen_t len = sizeof addr;
    if (::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len) != 0) throw IoError(sys_error("getsockname"));
    return ntohs(addr.sin_port);
}

Socket connect_tcp(const Endpoint& endpoint) {
    Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!s.valid()) throw IoError(sys_error("socket"));
    const sockaddr_in addr = resolve(endpoint);
    if (::connect(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
        throw IoError(sys_error("connect " + endpoint.to_string()));
    }
    set_nodelay(s.fd());
    return s;
}

std::unique_ptr<FrameChannel> tcp_channel(Socket socket) {
    set_nodelay(socket.fd());
    return std::make_unique<TcpChannel>(std::move(socket));
}

std::unique_ptr<FrameChannel> websocket_channel(Socket socket, bool client, std::vector<std::uint8_t> already_read) {
    set_nodelay(socket.fd());
    return std::make_unique<WebSocketChannel>(std::move(socket), client, std::move(already_read));
}

std::optional<std::string> HttpRequest::header(const std::string& name) const {
    const auto it = headers.find(lower(name));
    if (it == headers.end()) return std::nullopt;
    return it->second;
}

namespace {

/// Reads until CRLFCRLF; returns the head text and leaves surplus bytes in `rest`.
std::string read_head(const Socket& s, std::vector<std::uint8_t>& rest) {
    std::string buf;
    const std::size_t limit = 16 * 1024;
    for (;;) {
        const auto end = buf.find("\r\n\r\n");
        if (end != std::string::npos) {
            rest.assign(buf.begin() + static_cast<std::ptrdiff_t>(end + 4), buf.end());
            buf.resize(end);
            return buf;
        }
        if (buf.size() > limit) throw ProtocolError("HTTP header too large");
        const auto chunk = s.read_some(4096);
        if (chunk.empty()) throw ProtocolError("connection closed during HTTP handshake");
        buf.append(chunk.begin(), chunk.end());
    }
}

std::map<std::string, std::string> parse_headers(std::istringstream& in) {
    std::map<std::string, std::string> headers;
    std::string line;
    while (std::getline(in, line)) {
        const auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        headers[lower(trim(std::string_view(line).substr(0, colon)))] = trim(std::string_view(line).substr(colon + 1));
    }
    return headers;
}

}  // namespace

HttpRequest read_http_request(const Socket& s, std::vector<std::uint8_t>& rest) {
    std::istringstream in(read_head(s, rest));
    HttpRequest req;
    std::string line;
    std::getline(in, line);
    std::istringstream first(line);
    std::string version;
    first >> req.method >> req.target >> version;
    if (req.method.empty() || req.target.empty()) throw ProtocolError("malformed HTTP request line");
    req.headers = parse_headers(in);
    return req;
}

std::string websocket_accept_key(const std::string& client_key) {
    const std::string src = client_key + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
    std::uint8_t digest[SHA_DIGEST_LENGTH];
    SHA1(reinterpret_cast<const unsigned char*>(src.data()), src.size(), digest);
    return base64(digest);
}

bool websocket_accept(const Socket& s, const HttpRequest& request) {
    const auto key = request.header("sec-websocket-key");
    if (!key) throw ProtocolError("websocket upgrade without a key");
    const std::string response =
        "HTTP/1.1 101 Switching Protocols\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        "Sec-WebSocket-Accept: " +
        websocket_accept_key(*key) + "\r\n\r\n";
    return s.write_all(std::span(reinterpret_cast<const std::uint8_t*>(response.data()), response.size()));
}

std::unique_ptr<FrameChannel> websocket_connect(Socket socket, const std::string& host, const std::string& path) {
    std::uint8_t nonce[16];
    std::random_device rd;
    for (auto& b : nonce) b = static_cast<std::uint8_t>(rd());
    const std::string key = base64(nonce);
    const std::string request = "GET " + path + " HTTP/1.1\r\nHost: " + host +
                                "\r\nUpgrade: websocket\r\nConnection: Upgrade\r\nSec-WebSocket-Key: " + key +
                                "\r\nSec-WebSocket-Version: 13\r\n\r\n";
    if (!socket.write_all(std::span(reinterpret_cast<const std::uint8_t*>(request.data()), request.size()))) {
        throw IoError("websocket handshake write failed");
    }
    std::vector<std::uint8_t> rest;
    std::istringstream in(read_head(socket, rest));
    std::string status;
    std::getline(in, status);
    if (status.find(" 101") == std::string::npos) throw ProtocolError("websocket upgrade refused: " + trim(status));
    const auto headers = parse_headers(in);
    const auto accept = headers.find("sec-websocket-accept");
    if (accept == headers.end() || accept->second != websocket_accept_key(key)) {
        throw ProtocolError("websocket accept key mismatch");
    }
    return websocket_channel(std::move(socket), true, std::move(rest));
}

std::string mime_type(const std::string& path) {
    static const std::map<std::string, std::string> types = {
        {".html", "text/html; charset=utf-8"}, {".js", "text/javascript"}, {".mjs", "text/javascript"},
        {".css", "text/css"},                  {".json", "application/json"}, {".wasm", "application/wasm"},
        {".png", "image/png"},                 {".svg", "image/svg+xml"},     {".txt", "text/plain; charset=utf-8"},
    };
    const auto dot = path.rfind('.');
    if (dot != std::string::npos) {
        const auto it = types.find(lower(path.substr(dot)));
        if (it != types.end()) return it->second;
    }
    return "application/octet-stream";
}

}  // namespace lodvol::net
