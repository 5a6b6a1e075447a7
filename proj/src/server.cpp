#include "lodvol/server.hpp"

#include <poll.h>
#include <sys/socket.h>

#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <iostream>
#include <sstream>

namespace lodvol {

namespace {

struct SessionError {
    proto::ErrorCode code;
    std::string message;
};

/// Outbound frames of one session, drained by its writer thread.
class Outbox {
public:
    void push(Frame f) {
        {
            std::lock_guard lock(mutex_);
            if (closed_) return;
            frames_.push_back(std::move(f));
        }
        cv_.notify_one();
    }
    /// No more pushes; the writer still flushes what is queued.
    void finish() {
        {
            std::lock_guard lock(mutex_);
            closed_ = true;
        }
        cv_.notify_one();
    }
    /// No more pushes and queued frames are dropped.
    void abandon() {
        {
            std::lock_guard lock(mutex_);
            closed_ = true;
            frames_.clear();
        }
        cv_.notify_one();
    }
    /// Waits up to `timeout` for frames. Returns false once closed and drained.
    bool wait(std::deque<Frame>& out, std::chrono::milliseconds timeout) {
        std::unique_lock lock(mutex_);
        cv_.wait_for(lock, timeout, [&] { return closed_ || !frames_.empty(); });
        out.swap(frames_);
        return !(closed_ && out.empty());
    }

private:
    std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<Frame> frames_;
    bool closed_ = false;
};

bool peek_exact(int fd, char* out, std::size_t n) {
    for (;;) {
        const ssize_t got = ::recv(fd, out, n, MSG_PEEK | MSG_WAITALL);
        if (got < 0 && errno == EINTR) continue;
        return got == static_cast<ssize_t>(n);
    }
}

std::string http_response(int status, const std::string& reason, const std::string& type, const std::string& body) {
    std::ostringstream out;
    out << "HTTP/1.1 " << status << ' ' << reason << "\r\nContent-Type: " << type
        << "\r\nContent-Length: " << body.size() << "\r\nConnection: close\r\n\r\n"
        << body;
    return out.str();
}

}  // namespace

class Server::Session : public std::enable_shared_from_this<Server::Session> {
public:
    Session(Server& server, net::Socket socket) : server_(server), raw_fd_(socket.fd()), socket_(std::move(socket)) {}

    void start() {
        auto self = shared_from_this();
        reader_ = std::thread([self] { self->run(); });
    }

    void shutdown() {
        std::lock_guard lock(fd_mutex_);
        if (raw_fd_ >= 0) ::shutdown(raw_fd_, SHUT_RDWR);
    }

    bool finished() const { return finished_.load(); }
    void join() {
        if (reader_.joinable()) reader_.join();
    }

private:
    void run() {
        try {
            serve();
        } catch (const std::exception& e) {
            std::cerr << "session: " << e.what() << '\n';
        }
        {
            std::lock_guard lock(fd_mutex_);
            channel_.reset();
            socket_.reset();
            raw_fd_ = -1;
        }
        finished_ = true;
    }

    void serve() {
        char head[4];
        if (!peek_exact(socket_.fd(), head, 4)) return;
        if (std::string_view(head, 4) == "GET ") {
            std::vector<std::uint8_t> rest;
            const net::HttpRequest req = net::read_http_request(socket_, rest);
            const auto upgrade = req.header("upgrade");
            if (upgrade && upgrade->find("ebsocket") != std::string::npos) {
                if (!net::websocket_accept(socket_, req)) return;
                std::lock_guard lock(fd_mutex_);
                channel_ = net::websocket_channel(std::move(socket_), false, std::move(rest));
            } else {
                serve_static(req);
                return;
            }
        } else {
            std::lock_guard lock(fd_mutex_);
            channel_ = net::tcp_channel(std::move(socket_));
        }
        converse();
    }

    void serve_static(const net::HttpRequest& req) {
        std::string response;
        const auto& root = server_.config_.web_root;
        std::string target = req.target.substr(0, req.target.find('?'));
        if (target.empty() || target.back() == '/') target += "index.html";
        std::filesystem::path rel = std::filesystem::path(target).relative_path().lexically_normal();
        const bool escapes = !rel.empty() && *rel.begin() == "..";
        if (root.empty() || escapes || req.method != "GET") {
            response = http_response(404, "Not Found", "text/plain", "not found\n");
        } else {
            std::ifstream in(root / rel, std::ios::binary);
            if (!in) {
                response = http_response(404, "Not Found", "text/plain", "not found\n");
            } else {
                std::ostringstream body;
                body << in.rdbuf();
                response = http_response(200, "OK", net::mime_type(rel.string()), body.str());
            }
        }
        socket_.write_all(std::span(reinterpret_cast<const std::uint8_t*>(response.data()), response.size()));
    }

    void converse() {
        const DatasetMeta& meta = server_.store_.meta();
        auto outbox = std::make_shared<Outbox>();
        outbox_ = outbox;
        WorkerPool* pool = server_.pool_.get();
        queue_ = std::make_shared<WorkQueue>([outbox](Frame f) { outbox->push(std::move(f)); },
                                             [pool] { pool->notify(); });
        server_.pool_->attach(queue_);
        std::thread writer([this] { write_loop(); });

        bool orderly = true;
        try {
            while (auto frame = channel_->read_frame()) handle(proto::decode_frame(*frame), meta);
        } catch (const SessionError& e) {
            fail(e.code, e.message);
            orderly = false;
        } catch (const ProtocolError& e) {
            fail(proto::ErrorCode::malformed, e.what());
            orderly = false;
        } catch (const IoError&) {
        }
        queue_->close();
        server_.pool_->detach(queue_);
        if (orderly) {
            outbox_->abandon();
        } else {
            outbox_->finish();
        }
        writer.join();
        if (orderly) {
            shutdown();
        } else {
            channel_->shutdown();
        }
    }

    void fail(proto::ErrorCode code, const std::string& message) {
        ++server_.protocol_errors_;
        queue_->close();
        outbox_->push(proto::encode(proto::ErrorMsg{code, message}));
    }

    void handle(const proto::Message& msg, const DatasetMeta& meta) {
        using namespace proto;
        if (const auto* hello = std::get_if<Hello>(&msg)) {
            if (hello->protocol != kProtocolVersion) {
                throw SessionError{ErrorCode::unsupported_protocol,
                                   "protocol " + std::to_string(hello->protocol) + " is not supported"};
            }
            greeted_ = true;
            outbox_->push(encode(DatasetInfo{meta}));
        } else if (const auto* open = std::get_if<Open>(&msg)) {
            if (open->dataset != server_.store_.id()) {
                throw SessionError{ErrorCode::unknown_dataset, "unknown dataset '" + open->dataset + "'"};
            }
            greeted_ = true;
            outbox_->push(encode(DatasetInfo{meta}));
        } else if (const auto* spec = std::get_if<SetSpec>(&msg)) {
            auto specs = std::make_shared<const SpecSet>(from_wire(*spec, meta));
            try {
                queue_->abort_all(std::move(specs));
            } catch (const ProtocolError& e) {
                throw SessionError{ErrorCode::version_not_monotone, e.what()};
            }
        } else if (const auto* cut = std::get_if<CutDeltaMsg>(&msg)) {
            if (cut->timestep >= meta.timesteps) {
                throw SessionError{ErrorCode::invalid_node, "timestep " + std::to_string(cut->timestep) + " out of range"};
            }
            auto check = [&](const NodeId& n) {
                if (!meta.is_valid(n)) throw SessionError{ErrorCode::invalid_node, "invalid node " + n.to_string()};
            };
            for (const auto& p : cut->delta.added) check(p.node);
            for (const auto& n : cut->delta.removed) check(n);
            for (const auto& p : cut->delta.reprioritized) check(p.node);
            queue_->apply_delta(cut->version, cut->timestep, cut->delta);
        } else {
            throw SessionError{ErrorCode::malformed, "frame type " + std::to_string(int(type_of(msg))) +
                                                         " is not accepted by the server"};
        }
    }

    void write_loop() {
        std::deque<Frame> batch;
        std::optional<proto::Stats> last_stats;
        auto next_stats = std::chrono::steady_clock::now();
        const auto interval = server_.config_.stats_interval;
        bool alive = true;
        for (;;) {
            const bool more = outbox_->wait(batch, interval.count() > 0 ? interval : std::chrono::milliseconds(1000));
            for (const Frame& f : batch) {
                if (alive && !channel_->write_frame(f)) {
                    alive = false;
                    shutdown();
                }
            }
            batch.clear();
            if (!more) return;
            const auto now = std::chrono::steady_clock::now();
            if (alive && greeted_ && interval.count() > 0 && now >= next_stats) {
                next_stats = now + interval;
                const QueueCounts c = queue_->counts();
                const proto::Stats s{c.pending, c.running, server_.cache_->hits(), server_.cache_->misses()};
                if (s != last_stats) {
                    last_stats = s;
                    outbox_->push(proto::encode(s));
                }
            }
        }
    }

    Server& server_;
    std::mutex fd_mutex_;
    int raw_fd_;
    net::Socket socket_;
    std::unique_ptr<net::FrameChannel> channel_;
    std::shared_ptr<Outbox> outbox_;
    std::shared_ptr<WorkQueue> queue_;
    std::atomic<bool> greeted_{false};
    std::atomic<bool> finished_{false};
    std::thread reader_;
};

void apply_environment(ServerConfig& config) {
    if (const char* v = std::getenv("LODVOL_STORE")) config.store = v;
    if (const char* v = std::getenv("LODVOL_LISTEN")) config.listen = v;
    try {
        if (const char* v = std::getenv("LODVOL_WORKERS")) config.workers = static_cast<unsigned>(std::stoul(v));
        if (const char* v = std::getenv("LODVOL_CACHE_BYTES")) config.cache_bytes = std::stoull(v);
    } catch (const std::exception&) {
        throw Error("LODVOL_WORKERS and LODVOL_CACHE_BYTES must be unsigned integers");
    }
}

Server::Server(ServerConfig config) : config_(std::move(config)), store_(OctreeStore::open(config_.store)) {
    cache_ = std::make_shared<BlockCache>(config_.cache_bytes);
    const unsigned workers = config_.workers ? config_.workers : std::max(1u, std::thread::hardware_concurrency());
    pool_ = std::make_unique<WorkerPool>(store_, cache_, WorkerOptions{workers, config_.worker_delay});
}

Server::~Server() { stop(); }

void Server::start() {
    listener_ = net::listen_tcp(net::Endpoint::parse(config_.listen));
    port_ = net::local_port(listener_);
    acceptor_ = std::thread([this] { accept_loop(); });
}

void Server::accept_loop() {
    while (!stopping_) {
        pollfd p{listener_.fd(), POLLIN, 0};
        const int ready = ::poll(&p, 1, 100);
        reap(false);
        if (ready <= 0 || !(p.revents & POLLIN)) continue;
        net::Socket client(::accept4(listener_.fd(), nullptr, nullptr, SOCK_CLOEXEC));
        if (!client.valid()) continue;
        auto session = std::make_shared<Session>(*this, std::move(client));
        {
            std::lock_guard lock(mutex_);
            if (stopping_) break;
            sessions_.push_back(session);
        }
        ++opened_;
        session->start();
    }
}

void Server::reap(bool all) {
    std::list<std::shared_ptr<Session>> done;
    {
        std::lock_guard lock(mutex_);
        for (auto it = sessions_.begin(); it != sessions_.end();) {
            if (all || (*it)->finished()) {
                done.push_back(*it);
                it = sessions_.erase(it);
            } else {
                ++it;
            }
        }
    }
    for (auto& s : done) {
        if (all) s->shutdown();
        s->join();
    }
}

void Server::wait() {
    std::unique_lock lock(mutex_);
    stopped_.wait(lock, [&] { return stopping_.load(); });
}

void Server::stop() {
    if (stopping_.exchange(true)) {
        if (acceptor_.joinable()) acceptor_.join();
        return;
    }
    {
        std::lock_guard lock(mutex_);
    }
    stopped_.notify_all();
    if (acceptor_.joinable()) acceptor_.join();
    reap(true);
    pool_->stop();
    listener_.reset();
}

ServerStats Server::stats() const {
    ServerStats s;
    s.sessions_opened = opened_.load();
    {
        std::lock_guard lock(mutex_);
        for (const auto& session : sessions_) s.sessions_active += session->finished() ? 0 : 1;
    }
    s.protocol_errors = protocol_errors_.load();
    return s;
}

}  // namespace lodvol
