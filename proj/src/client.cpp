#include "lodvol/client.hpp"

namespace lodvol {

std::unique_ptr<BackendClient> BackendClient::connect(const net::Endpoint& endpoint, Transport transport) {
    net::Socket s = net::connect_tcp(endpoint);
    std::unique_ptr<net::FrameChannel> channel = transport == Transport::websocket
                                                     ? net::websocket_connect(std::move(s), endpoint.to_string())
                                                     : net::tcp_channel(std::move(s));
    return std::unique_ptr<BackendClient>(new BackendClient(std::move(channel)));
}

BackendClient::BackendClient(std::unique_ptr<net::FrameChannel> channel) : channel_(std::move(channel)) {
    reader_ = std::thread([this] { run(); });
}

BackendClient::~BackendClient() { close(); }

void BackendClient::close() {
    if (!reader_.joinable()) return;
    channel_->shutdown();
    reader_.join();
}

void BackendClient::run() {
    std::optional<std::string> failure;
    try {
        while (auto frame = channel_->read_frame()) {
            proto::Message m = proto::decode_frame(*frame);
            {
                std::lock_guard lock(mutex_);
                inbox_.push_back(std::move(m));
            }
            cv_.notify_all();
        }
    } catch (const std::exception& e) {
        failure = e.what();
    }
    {
        std::lock_guard lock(mutex_);
        ended_ = true;
        failure_ = failure;
    }
    cv_.notify_all();
}

bool BackendClient::send(const proto::Message& message) { return send_raw(proto::encode(message)); }

bool BackendClient::send_raw(std::span<const std::uint8_t> frame) { return channel_->write_frame(frame); }

DatasetMeta BackendClient::hello(std::chrono::milliseconds timeout) {
    if (!send(proto::Hello{})) throw IoError("connection closed before HELLO");
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        auto m = wait(std::max(left, std::chrono::milliseconds(0)));
        if (!m) {
            if (!open()) throw IoError("connection closed during handshake");
            throw IoError("timed out waiting for DATASET_INFO");
        }
        if (auto* info = std::get_if<proto::DatasetInfo>(&*m)) return info->meta;
        if (auto* err = std::get_if<proto::ErrorMsg>(&*m)) throw ProtocolError("server error: " + err->message);
    }
}

std::optional<proto::Message> BackendClient::poll() {
    std::lock_guard lock(mutex_);
    if (inbox_.empty()) return std::nullopt;
    proto::Message m = std::move(inbox_.front());
    inbox_.pop_front();
    return m;
}

std::optional<proto::Message> BackendClient::wait(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mutex_);
    cv_.wait_for(lock, timeout, [&] { return ended_ || !inbox_.empty(); });
    if (inbox_.empty()) return std::nullopt;
    proto::Message m = std::move(inbox_.front());
    inbox_.pop_front();
    return m;
}

bool BackendClient::open() const {
    std::lock_guard lock(mutex_);
    return !ended_ || !inbox_.empty();
}

std::optional<std::string> BackendClient::failure() const {
    std::lock_guard lock(mutex_);
    return failure_;
}

std::uint64_t BackendClient::bytes_received() const { return channel_->bytes_read(); }

}  // namespace lodvol
