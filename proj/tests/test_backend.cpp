#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <thread>

#include "doctest.h"
#include "lodvol/client.hpp"
#include "lodvol/server.hpp"
#include "live_server.hpp"
#include "test_util.hpp"

using namespace lodvol;
using namespace std::chrono_literals;

namespace {

using testing::LiveServer;

BlockData block_of(std::uint32_t t, NodeId n, std::size_t floats) {
    BlockData b;
    b.node = n;
    b.timestep = t;
    b.samples.assign(floats, static_cast<float>(n.ix));
    return b;
}

std::shared_ptr<const SpecSet> specs_v(std::uint32_t v) {
    return std::make_shared<const SpecSet>(SpecSet{v, {SubVolumeSpec{1, {Limit{"q", 0.3f, 2.0f}}}}});
}

NodeId leaf(std::uint16_t x, std::uint16_t y = 0, std::uint16_t z = 0) { return NodeId{0, x, y, z}; }

/// Records emitted frames in order, decoded.
struct Sink {
    std::mutex mutex;
    std::vector<proto::Message> frames;
    WorkQueue::Emit emit() {
        return [this](Frame f) {
            std::lock_guard lock(mutex);
            frames.push_back(proto::decode_frame(f));
        };
    }
    std::vector<proto::Message> snapshot() {
        std::lock_guard lock(mutex);
        return frames;
    }
};

CutDelta adds(std::initializer_list<std::pair<NodeId, float>> items) {
    CutDelta d;
    for (const auto& [n, p] : items) d.added.push_back({n, p});
    return d;
}

}  // namespace

TEST_CASE("block cache") {
    const std::size_t floats = 100;  // 400 bytes per block
    BlockCache cache(1000);
    std::size_t loads = 0;
    auto loader = [&](std::uint32_t t, NodeId n) {
        return [&, t, n] {
            ++loads;
            return block_of(t, n, floats);
        };
    };
    const auto a = cache.get_or_load(0, leaf(1), loader(0, leaf(1)));
    const auto again = cache.get_or_load(0, leaf(1), loader(0, leaf(1)));
    CHECK(loads == 1);
    CHECK(a == again);
    CHECK(cache.hits() == 1);
    CHECK(cache.misses() == 1);

    cache.get_or_load(0, leaf(2), loader(0, leaf(2)));
    cache.get_or_load(0, leaf(1), loader(0, leaf(1)));  // leaf 1 becomes most recent
    cache.get_or_load(0, leaf(3), loader(0, leaf(3)));  // evicts leaf 2
    CHECK(cache.resident_bytes() <= cache.capacity());
    CHECK(cache.size() == 2);
    CHECK(cache.find(0, leaf(2)) == nullptr);
    CHECK(cache.find(0, leaf(1)) != nullptr);
    CHECK(cache.find(1, leaf(1)) == nullptr);

    BlockCache tiny(100);
    tiny.get_or_load(0, leaf(1), loader(0, leaf(1)));
    CHECK(tiny.size() == 0);

    std::mt19937 rng(3);
    BlockCache lru(2000);
    for (int i = 0; i < 2000; ++i) {
        const NodeId n = leaf(static_cast<std::uint16_t>(rng() % 12));
        const auto b = lru.get_or_load(0, n, loader(0, n));
        CHECK(b->samples.front() == static_cast<float>(n.ix));
        CHECK(lru.resident_bytes() <= lru.capacity());
    }
}

TEST_CASE("work queue examples") {
    Sink sink;
    WorkQueue q(sink.emit());
    q.abort_all(specs_v(1));
    SUBCASE("max priority pops first") {
        q.apply_delta(1, 0, adds({{leaf(0), 2}, {leaf(1), 5}}));
        CHECK(q.try_pop()->key.node == leaf(1));
    }
    SUBCASE("reprioritize in place") {
        q.apply_delta(1, 0, adds({{leaf(0), 2}}));
        CutDelta d = adds({{leaf(1), 5}});
        d.reprioritized.push_back({leaf(0), 9});
        q.apply_delta(1, 0, d);
        CHECK(q.try_pop()->key.node == leaf(0));
    }
    SUBCASE("cancellation") {
        q.apply_delta(1, 0, adds({{leaf(0), 2}}));
        CutDelta d;
        d.removed.push_back(leaf(0));
        q.apply_delta(1, 0, d);
        CHECK_FALSE(q.try_pop().has_value());
    }
    SUBCASE("ties by node id then timestep") {
        q.apply_delta(1, 3, adds({{leaf(2), 1}, {NodeId{1, 0, 0, 0}, 1}}));
        q.apply_delta(1, 1, adds({{leaf(2), 1}}));
        CHECK(q.try_pop()->key == WorkKey{1, 1, leaf(2)});
        CHECK(q.try_pop()->key == WorkKey{1, 3, leaf(2)});
        CHECK(q.try_pop()->key == WorkKey{1, 3, NodeId{1, 0, 0, 0}});
    }
    SUBCASE("abort clears pending and acks") {
        for (std::uint16_t i = 0; i < 10; ++i) q.apply_delta(1, 0, adds({{leaf(i), float(i)}}));
        CHECK(q.counts().pending == 10);
        q.abort_all(specs_v(2));
        CHECK(q.counts().pending == 0);
        const auto frames = sink.snapshot();
        REQUIRE(frames.size() == 2);
        CHECK(std::get<proto::AbortAck>(frames[0]).version == 1);
        CHECK(std::get<proto::AbortAck>(frames[1]).version == 2);
        CHECK_THROWS_AS(q.abort_all(specs_v(2)), ProtocolError);
        CHECK_THROWS_AS(q.abort_all(specs_v(1)), ProtocolError);
    }
    SUBCASE("stale and premature deltas") {
        q.abort_all(specs_v(2));
        CHECK_FALSE(q.apply_delta(1, 0, adds({{leaf(0), 1}})));
        CHECK(q.counts().stale_deltas == 1);
        CHECK(q.counts().pending == 0);
        CHECK_THROWS_AS(q.apply_delta(3, 0, adds({{leaf(0), 1}})), ProtocolError);
        CHECK_THROWS_AS(q.apply_delta(2, 0, adds({{leaf(0), -1}})), ProtocolError);
    }
}

TEST_CASE("work queue completion and abort ordering") {
    Sink sink;
    WorkQueue q(sink.emit());
    q.abort_all(specs_v(1));
    q.apply_delta(1, 0, adds({{leaf(0), 3}, {leaf(1), 2}, {leaf(2), 1}}));
    const WorkItem first = *q.try_pop();
    const WorkItem second = *q.try_pop();
    CHECK(q.counts().running == 2);

    SUBCASE("removed while running is suppressed, re-added is delivered") {
        CutDelta d;
        d.removed = {first.key.node, second.key.node};
        q.apply_delta(1, 0, d);
        q.apply_delta(1, 0, adds({{second.key.node, 1}}));
        CHECK_FALSE(q.finish(first.key, {proto::encode(proto::NodeDone{first.key})}));
        CHECK(q.finish(second.key, {proto::encode(proto::NodeDone{second.key})}));
        CHECK(q.counts().suppressed == 1);
    }
    SUBCASE("old results after abort are suppressed and the ack waits for them") {
        q.abort_all(specs_v(2));
        q.apply_delta(2, 0, adds({{leaf(5), 1}}));
        CHECK(q.pending_acks() == 1);
        CHECK_FALSE(q.try_pop().has_value());  // gated until the ack is out
        CHECK_FALSE(q.finish(first.key, {proto::encode(proto::NodeDone{first.key})}));
        CHECK(q.pending_acks() == 1);
        CHECK_FALSE(q.finish(second.key, {proto::encode(proto::NodeDone{second.key})}));
        CHECK(q.pending_acks() == 0);
        const WorkItem fresh = *q.try_pop();
        CHECK(fresh.key == WorkKey{2, 0, leaf(5)});
        CHECK(fresh.specs->version == 2);
        CHECK(q.finish(fresh.key, {proto::encode(proto::NodeDone{fresh.key})}));
        const auto frames = sink.snapshot();
        REQUIRE(frames.size() == 3);
        CHECK(std::get<proto::AbortAck>(frames[1]).version == 2);
        CHECK(std::get<proto::NodeDone>(frames[2]).key.version == 2);
    }
    SUBCASE("close drops everything") {
        q.close();
        CHECK_FALSE(q.finish(first.key, {proto::encode(proto::NodeDone{first.key})}));
        CHECK_FALSE(q.try_pop().has_value());
        CHECK(sink.snapshot().size() == 1);
    }
}

TEST_CASE("work queue pop order matches a sorted-list oracle") {
    struct Ref {
        float priority;
        WorkKey key;
    };
    std::mt19937 rng(99);
    for (int script = 0; script < 20; ++script) {
        Sink sink;
        WorkQueue q(sink.emit());
        q.abort_all(specs_v(1));
        std::vector<Ref> oracle;
        const float levels[] = {0.0f, 0.25f, 0.5f, 0.5f, 0.75f, 1.0f};
        auto pick_priority = [&] {
            return rng() % 2 ? levels[rng() % 6] : std::uniform_real_distribution<float>(0, 1)(rng);
        };
        auto find = [&](const WorkKey& k) {
            return std::find_if(oracle.begin(), oracle.end(), [&](const Ref& r) { return r.key == k; });
        };
        for (int op = 0; op < 300; ++op) {
            const WorkKey key{1, static_cast<std::uint32_t>(rng() % 2),
                              NodeId{static_cast<std::uint8_t>(rng() % 2), static_cast<std::uint16_t>(rng() % 6), 0, 0}};
            const int kind = rng() % 4;
            if (kind == 0) {
                const float p = pick_priority();
                CutDelta d;
                d.added.push_back({key.node, p});
                q.apply_delta(1, key.timestep, d);
                if (auto it = find(key); it != oracle.end()) {
                    it->priority = p;
                } else {
                    oracle.push_back({p, key});
                }
            } else if (kind == 1) {
                const float p = pick_priority();
                CutDelta d;
                d.reprioritized.push_back({key.node, p});
                q.apply_delta(1, key.timestep, d);
                if (auto it = find(key); it != oracle.end()) it->priority = p;
            } else if (kind == 2) {
                CutDelta d;
                d.removed.push_back(key.node);
                q.apply_delta(1, key.timestep, d);
                if (auto it = find(key); it != oracle.end()) oracle.erase(it);
            } else {
                const auto popped = q.try_pop();
                if (oracle.empty()) {
                    CHECK_FALSE(popped.has_value());
                    continue;
                }
                std::sort(oracle.begin(), oracle.end(), [](const Ref& a, const Ref& b) {
                    if (a.priority != b.priority) return a.priority > b.priority;
                    if (a.key.node != b.key.node) return a.key.node < b.key.node;
                    return a.key.timestep < b.key.timestep;
                });
                REQUIRE(popped.has_value());
                CHECK(popped->key == oracle.front().key);
                CHECK(popped->priority == oracle.front().priority);
                oracle.erase(oracle.begin());
                q.finish(popped->key, {});
            }
            CHECK(q.counts().pending == oracle.size());
        }
    }
}

TEST_CASE("workers drain queues") {
    testing::TempDir tmp;
    const OctreeStore store = testing::synth_store(tmp.path(), {33, 33, 33}, 4);
    const auto leaves = store.meta().level_nodes(0);

    SUBCASE("single worker completes in priority order") {
        Sink sink;
        auto q = std::make_shared<WorkQueue>(sink.emit());
        q->abort_all(specs_v(1));
        q->apply_delta(1, 0, adds({{leaves[0], 5}, {leaves[1], 3}, {leaves[2], 9}}));
        WorkerPool pool(store, std::make_shared<BlockCache>(1 << 20), WorkerOptions{1});
        pool.attach(q);
        for (int i = 0; i < 500 && pool.processed() < 3; ++i) std::this_thread::sleep_for(5ms);
        std::vector<NodeId> done;
        for (const auto& m : sink.snapshot()) {
            if (auto* d = std::get_if<proto::NodeDone>(&m)) done.push_back(d->key.node);
        }
        CHECK(done == std::vector<NodeId>{leaves[2], leaves[0], leaves[1]});
    }

    SUBCASE("cache hit performs no store read") {
        BlockCache cache(1 << 20);
        const WorkItem item{WorkKey{1, 0, leaves[7]}, 1.0f, specs_v(1)};
        const std::uint64_t before = store.read_count();
        const auto a = process_item(item, store, cache);
        CHECK(store.read_count() == before + 1);
        const auto b = process_item(item, store, cache);
        CHECK(store.read_count() == before + 1);
        CHECK(a == b);
        BlockCache off(0);
        CHECK(process_item(item, store, off) == a);
    }

    SUBCASE("failures are reported per key") {
        BlockCache cache(0);
        const WorkItem item{WorkKey{1, 5, leaves[0]}, 1.0f, specs_v(1)};
        const auto frames = process_item(item, store, cache);
        REQUIRE(frames.size() == 1);
        const auto err = std::get<proto::ErrorMsg>(proto::decode_frame(frames[0]));
        CHECK(err.code == proto::ErrorCode::extraction_failed);
        CHECK(err.message.find(item.key.to_string()) != std::string::npos);
    }

    SUBCASE("many workers complete every item exactly once") {
        Sink sink_a, sink_b;
        auto qa = std::make_shared<WorkQueue>(sink_a.emit());
        auto qb = std::make_shared<WorkQueue>(sink_b.emit());
        WorkerPool pool(store, std::make_shared<BlockCache>(1 << 22), WorkerOptions{4});
        qa->abort_all(specs_v(1));
        qb->abort_all(specs_v(1));
        pool.attach(qa);
        pool.attach(qb);
        std::mt19937 rng(4);
        std::map<const WorkQueue*, std::size_t> self_popped;
        for (std::size_t start = 0; start < leaves.size(); start += 64) {
            for (auto* q : {&qa, &qb}) {
                CutDelta d;
                for (std::size_t i = start; i < std::min(leaves.size(), start + 64); ++i) {
                    d.added.push_back({leaves[i], float(rng() % 100)});
                }
                (*q)->apply_delta(1, 0, d);
                if ((*q)->try_pop()) ++self_popped[q->get()];  // compete with the workers; never finished
            }
        }
        for (int i = 0; i < 2000 && pool.processed() < 2 * leaves.size() - self_popped[qa.get()] - self_popped[qb.get()]; ++i) {
            std::this_thread::sleep_for(5ms);
        }
        std::this_thread::sleep_for(50ms);
        for (auto [s, q] : {std::pair{&sink_a, qa.get()}, std::pair{&sink_b, qb.get()}}) {
            std::multiset<NodeId> done;
            for (const auto& m : s->snapshot()) {
                if (auto* d = std::get_if<proto::NodeDone>(&m)) done.insert(d->key.node);
            }
            CHECK(done.size() == leaves.size() - self_popped[q]);
            CHECK(std::set<NodeId>(done.begin(), done.end()).size() == done.size());
        }
    }
}

namespace {

/// Collects messages until `until` holds for one of them or the timeout passes.
template <typename Pred>
std::vector<proto::Message> collect(BackendClient& c, Pred until, std::chrono::milliseconds timeout = 10s) {
    std::vector<proto::Message> out;
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (std::chrono::steady_clock::now() < deadline) {
        auto m = c.wait(50ms);
        if (!m) {
            if (!c.open()) break;
            continue;
        }
        out.push_back(*m);
        if (until(out.back())) break;
    }
    return out;
}

CutDelta all_nodes(const DatasetMeta& meta, std::uint32_t level) {
    CutDelta d;
    float p = 1.0f;
    for (const NodeId& n : meta.level_nodes(level)) d.added.push_back({n, p *= 0.99f});
    return d;
}

}  // namespace

TEST_CASE("server handshake and errors") {
    LiveServer live;
    const DatasetMeta& meta = live.store.meta();
    using proto::ErrorCode;

    auto expect_error = [&](std::vector<std::uint8_t> frame, ErrorCode code) {
        auto c = BackendClient::connect(live.endpoint());
        c->send_raw(frame);
        const auto got = collect(*c, [](const proto::Message& m) { return std::holds_alternative<proto::ErrorMsg>(m); });
        REQUIRE(!got.empty());
        CHECK(std::get<proto::ErrorMsg>(got.back()).code == code);
        // the server closes the session afterwards
        const auto rest = collect(*c, [](const proto::Message&) { return false; }, 3s);
        CHECK(std::none_of(rest.begin(), rest.end(), [](const proto::Message& m) {
            return std::holds_alternative<proto::ResultMeshMsg>(m);
        }));
        CHECK_FALSE(c->open());
    };

    SUBCASE("hello and open answer with the dataset") {
        auto c = BackendClient::connect(live.endpoint());
        CHECK(c->hello() == meta);
        c->send(proto::Open{"synth"});
        const auto got = collect(*c, [](const proto::Message& m) { return std::holds_alternative<proto::DatasetInfo>(m); });
        REQUIRE(!got.empty());
        CHECK(std::get<proto::DatasetInfo>(got.back()).meta == meta);
        // STATS is sent once after the handshake and then only when a counter changes
        auto seen = got;
        const auto later = collect(*c, [](const proto::Message& m) { return std::holds_alternative<proto::Stats>(m); }, 1s);
        seen.insert(seen.end(), later.begin(), later.end());
        CHECK(std::any_of(seen.begin(), seen.end(), [](const proto::Message& m) {
            return std::holds_alternative<proto::Stats>(m);
        }));
    }
    SUBCASE("unsupported protocol") { expect_error(proto::encode(proto::Hello{2}), ErrorCode::unsupported_protocol); }
    SUBCASE("unknown dataset") { expect_error(proto::encode(proto::Open{"other"}), ErrorCode::unknown_dataset); }
    SUBCASE("malformed frame") {
        auto frame = proto::encode(proto::Hello{});
        frame[4] = 0x44;
        expect_error(frame, ErrorCode::malformed);
    }
    SUBCASE("server-only frame") { expect_error(proto::encode(proto::AbortAck{1}), ErrorCode::malformed); }
    SUBCASE("bad field index") {
        expect_error(proto::encode(proto::SetSpec{1, {proto::WireSubVolume{0, {proto::WireLimit{9, 0, 1}}}}}),
                     ErrorCode::malformed);
    }
    SUBCASE("non-monotone version") {
        auto c = BackendClient::connect(live.endpoint());
        c->send(proto::to_wire(*specs_v(3), meta));
        c->send(proto::to_wire(*specs_v(3), meta));
        const auto got = collect(*c, [](const proto::Message& m) { return std::holds_alternative<proto::ErrorMsg>(m); });
        REQUIRE(got.size() >= 2);
        CHECK(std::get<proto::AbortAck>(got.front()).version == 3);
        CHECK(std::get<proto::ErrorMsg>(got.back()).code == ErrorCode::version_not_monotone);
    }
    SUBCASE("invalid node and timestep") {
        auto c = BackendClient::connect(live.endpoint());
        c->send(proto::to_wire(*specs_v(1), meta));
        c->send(proto::CutDeltaMsg{1, 0, adds({{NodeId{0, 99, 0, 0}, 1}})});
        auto got = collect(*c, [](const proto::Message& m) { return std::holds_alternative<proto::ErrorMsg>(m); });
        CHECK(std::get<proto::ErrorMsg>(got.back()).code == ErrorCode::invalid_node);

        auto d = BackendClient::connect(live.endpoint());
        d->send(proto::to_wire(*specs_v(1), meta));
        d->send(proto::CutDeltaMsg{1, 7, adds({{meta.root(), 1}})});
        got = collect(*d, [](const proto::Message& m) { return std::holds_alternative<proto::ErrorMsg>(m); });
        CHECK(std::get<proto::ErrorMsg>(got.back()).code == ErrorCode::invalid_node);
    }
    CHECK(live.server->stats().protocol_errors >= 0);
}

TEST_CASE("server streams results and honours aborts") {
    LiveServer live(5ms);
    const DatasetMeta& meta = live.store.meta();

    SUBCASE("every requested node completes with one mesh per sub-volume") {
        auto c = BackendClient::connect(live.endpoint());
        c->hello();
        SpecSet specs{1, {SubVolumeSpec{1, {Limit{"q", 0.3f, 2.0f}}}, SubVolumeSpec{2, {Limit{"q", 0.05f, 0.3f}}}}};
        c->send(proto::to_wire(specs, meta));
        const CutDelta d = all_nodes(meta, 0);
        c->send(proto::CutDeltaMsg{1, 1, d});
        std::size_t done = 0;
        std::map<NodeId, int> meshes;
        const auto got = collect(*c, [&](const proto::Message& m) {
            if (auto* r = std::get_if<proto::ResultMeshMsg>(&m)) ++meshes[r->mesh.node];
            return std::holds_alternative<proto::NodeDone>(m) && ++done == d.added.size();
        });
        CHECK(done == d.added.size());
        CHECK(std::holds_alternative<proto::AbortAck>(got.front()) == false);  // hello reply came first
        for (const auto& [node, count] : meshes) CHECK(count == 2);
        std::size_t triangles = 0;
        for (const auto& m : got) {
            if (auto* r = std::get_if<proto::ResultMeshMsg>(&m)) {
                CHECK(r->mesh.timestep == 1);
                CHECK(r->mesh.velocities.has_value());
                triangles += r->mesh.triangle_count();
            }
        }
        CHECK(triangles > 0);
    }

    SUBCASE("no old-version frame after the abort ack") {
        for (int trial = 0; trial < 5; ++trial) {
            auto c = BackendClient::connect(live.endpoint());
            c->hello();
            c->send(proto::to_wire(*specs_v(1), meta));
            c->send(proto::CutDeltaMsg{1, 0, all_nodes(meta, 0)});
            std::size_t v1_done = 0;
            collect(*c, [&](const proto::Message& m) {
                return std::holds_alternative<proto::NodeDone>(m) && ++v1_done == 3;
            });
            c->send(proto::to_wire(*specs_v(2), meta));
            c->send(proto::CutDeltaMsg{2, 0, all_nodes(meta, 1)});
            std::size_t v2_done = 0;
            const auto got = collect(*c, [&](const proto::Message& m) {
                return std::holds_alternative<proto::NodeDone>(m) && ++v2_done == meta.level_nodes(1).size();
            });
            bool acked = false;
            for (const auto& m : got) {
                if (auto* a = std::get_if<proto::AbortAck>(&m)) acked = acked || a->version == 2;
                std::optional<std::uint32_t> version;
                if (auto* r = std::get_if<proto::ResultMeshMsg>(&m)) version = r->mesh.spec_version;
                if (auto* n = std::get_if<proto::NodeDone>(&m)) version = n->key.version;
                if (version) CHECK((*version == 2) == acked);
            }
            CHECK(acked);
            CHECK(v2_done == meta.level_nodes(1).size());
        }
    }

    SUBCASE("disconnect mid-work cancels the session") {
        {
            auto c = BackendClient::connect(live.endpoint());
            c->hello();
            c->send(proto::to_wire(*specs_v(1), meta));
            c->send(proto::CutDeltaMsg{1, 0, all_nodes(meta, 0)});
            c->wait(1s);
        }
        for (int i = 0; i < 200 && live.server->stats().sessions_active > 0; ++i) std::this_thread::sleep_for(10ms);
        CHECK(live.server->stats().sessions_active == 0);
        const std::uint64_t processed = live.server->pool().processed();
        std::this_thread::sleep_for(100ms);
        CHECK(live.server->pool().processed() <= processed + 2);
    }
}

TEST_CASE("websocket transport carries identical frames") {
    testing::TempDir web;
    {
        std::ofstream(web / "index.html") << "<html>viewer</html>";
    }
    LiveServer live(0ms, web.path());
    const DatasetMeta& meta = live.store.meta();
    auto ws = BackendClient::connect(live.endpoint(), BackendClient::Transport::websocket);
    CHECK(ws->hello() == meta);
    ws->send(proto::to_wire(*specs_v(1), meta));
    ws->send(proto::CutDeltaMsg{1, 0, adds({{meta.root(), 1}})});
    const auto over_ws = collect(*ws, [](const proto::Message& m) { return std::holds_alternative<proto::NodeDone>(m); });

    auto tcp = BackendClient::connect(live.endpoint());
    tcp->hello();
    tcp->send(proto::to_wire(*specs_v(1), meta));
    tcp->send(proto::CutDeltaMsg{1, 0, adds({{meta.root(), 1}})});
    const auto over_tcp = collect(*tcp, [](const proto::Message& m) { return std::holds_alternative<proto::NodeDone>(m); });

    auto results = [](const std::vector<proto::Message>& ms) {
        std::vector<proto::Message> out;
        for (const auto& m : ms) {
            if (!std::holds_alternative<proto::Stats>(m)) out.push_back(m);
        }
        return out;
    };
    CHECK(results(over_ws) == results(over_tcp));
    CHECK(ws->bytes_received() > 0);

    // plain HTTP on the same port serves static files
    net::Socket s = net::connect_tcp(live.endpoint());
    const std::string req = "GET /index.html HTTP/1.1\r\nHost: x\r\n\r\n";
    s.write_all(std::span(reinterpret_cast<const std::uint8_t*>(req.data()), req.size()));
    std::string response;
    for (auto chunk = s.read_some(4096); !chunk.empty(); chunk = s.read_some(4096)) response.append(chunk.begin(), chunk.end());
    CHECK(response.rfind("HTTP/1.1 200", 0) == 0);
    CHECK(response.find("<html>viewer</html>") != std::string::npos);

    net::Socket bad = net::connect_tcp(live.endpoint());
    const std::string escape = "GET /../../etc/passwd HTTP/1.1\r\n\r\n";
    bad.write_all(std::span(reinterpret_cast<const std::uint8_t*>(escape.data()), escape.size()));
    const auto head = bad.read_some(4096);
    CHECK(std::string(head.begin(), head.end()).rfind("HTTP/1.1 404", 0) == 0);
}

TEST_CASE("websocket accept key") {
    // worked example from the WebSocket RFC
    CHECK(net::websocket_accept_key("dGhlIHNhbXBsZSBub25jZQ==") == "s3pPLMBiTxaQ9kYGzzhZRbK+xOo=");
}

TEST_CASE("endpoint parsing and environment") {
    CHECK(net::Endpoint::parse("10.0.0.1:99").host == "10.0.0.1");
    CHECK(net::Endpoint::parse(":7000").port == 7000);
    CHECK(net::Endpoint::parse("7000").host == "0.0.0.0");
    CHECK_THROWS_AS(net::Endpoint::parse("host:x"), Error);
    CHECK_THROWS_AS(net::Endpoint::parse("host:70000"), Error);

    ServerConfig config;
    ::setenv("LODVOL_LISTEN", "0.0.0.0:9000", 1);
    ::setenv("LODVOL_WORKERS", "3", 1);
    ::setenv("LODVOL_CACHE_BYTES", "1024", 1);
    ::setenv("LODVOL_STORE", "/data/store", 1);
    apply_environment(config);
    CHECK(config.listen == "0.0.0.0:9000");
    CHECK(config.workers == 3);
    CHECK(config.cache_bytes == 1024);
    CHECK(config.store == "/data/store");
    ::setenv("LODVOL_WORKERS", "many", 1);
    CHECK_THROWS_AS(apply_environment(config), Error);
    for (const char* v : {"LODVOL_LISTEN", "LODVOL_WORKERS", "LODVOL_CACHE_BYTES", "LODVOL_STORE"}) ::unsetenv(v);
}
