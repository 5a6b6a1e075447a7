#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "lodvol/octree.hpp"
#include "lodvol/synth.hpp"
#include "test_util.hpp"

using namespace lodvol;
using lodvol::testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Independent oracle for any node sample: stride-2^level sub-sampling of the finest lattice
/// with edge clamping, computed straight from global indices.
std::uint32_t oracle_global(const DatasetMeta& meta, const NodeId& n, std::size_t axis, std::uint32_t s) {
    const std::uint64_t g = (std::uint64_t{n.coord(axis)} * meta.block_size + s) << n.level;
    return static_cast<std::uint32_t>(std::min<std::uint64_t>(g, meta.dims[axis] - 1));
}

}  // namespace

TEST_CASE("build_leaf examples") {
    SUBCASE("constant field") {
        const DatasetMeta meta = DatasetMeta::make({41, 41, 21}, {1, 1, 1}, {}, 20, {"q"}, 1);
        const auto grid = testing::make_grid(meta.dims, 1, [](auto...) { return 7.0; });
        const BlockData leaf = build_leaf(grid, meta, NodeId{0, 1, 1, 0}, 0);
        CHECK(leaf.samples.size() == 21u * 21u * 21u);
        for (float v : leaf.samples) CHECK(v == 7.0f);
    }
    SUBCASE("linear ramp") {
        const DatasetMeta meta = DatasetMeta::make({41, 41, 21}, {1, 1, 1}, {}, 20, {"q"}, 1);
        const auto grid = testing::make_grid(meta.dims, 1, [](std::size_t, auto x, auto, auto) { return double(x); });
        const BlockData leaf = build_leaf(grid, meta, NodeId{0, 1, 0, 0}, 0);
        for (std::size_t x = 0; x <= 20; ++x) CHECK(leaf.at(0, x, 3, 5) == float(20 + x));
    }
    SUBCASE("border clamp") {
        const DatasetMeta meta = DatasetMeta::make({31, 31, 21}, {1, 1, 1}, {}, 20, {"q"}, 1);
        const auto grid = testing::make_grid(meta.dims, 1, [](std::size_t, auto x, auto, auto) { return double(x); });
        const BlockData leaf = build_leaf(grid, meta, NodeId{0, 1, 0, 0}, 0);
        for (std::size_t x = 0; x <= 10; ++x) CHECK(leaf.at(0, x, 0, 0) == float(20 + x));
        for (std::size_t x = 10; x <= 20; ++x) CHECK(leaf.at(0, x, 0, 0) == 30.0f);
    }
    SUBCASE("invalid node") {
        const DatasetMeta meta = DatasetMeta::make({31, 31, 21}, {1, 1, 1}, {}, 20, {"q"}, 1);
        const auto grid = testing::make_grid(meta.dims, 1, [](auto...) { return 0.0; });
        CHECK_THROWS_AS(build_leaf(grid, meta, NodeId{0, 2, 0, 0}, 0), Error);
        CHECK_THROWS_AS(build_leaf(grid, meta, meta.root(), 0), Error);
    }
}

TEST_CASE("downsample examples") {
    SUBCASE("constant children") {
        const DatasetMeta meta = DatasetMeta::make({9, 9, 9}, {1, 1, 1}, {}, 4, {"q"}, 1);
        const auto grid = testing::make_grid(meta.dims, 1, [](auto...) { return 3.0; });
        std::vector<BlockData> kids;
        for (const NodeId& c : meta.children(meta.root())) kids.push_back(build_leaf(grid, meta, c, 0));
        const BlockData parent = downsample(kids, meta.root(), meta);
        for (float v : parent.samples) CHECK(v == 3.0f);
    }
    SUBCASE("linear field is reproduced on the coarse lattice") {
        const DatasetMeta meta = DatasetMeta::make({17, 13, 9}, {1, 1, 1}, {}, 4, {"q"}, 1);
        const auto grid = testing::make_grid(meta.dims, 1, [](std::size_t, auto x, auto, auto) { return double(x); });
        const NodeId parent{1, 1, 0, 0};
        std::vector<BlockData> kids;
        for (const NodeId& c : meta.children(parent)) kids.push_back(build_leaf(grid, meta, c, 0));
        const BlockData p = downsample(kids, parent, meta);
        for (std::uint32_t x = 0; x <= 4; ++x) CHECK(p.at(0, x, 1, 1) == float(oracle_global(meta, parent, 0, x)));
    }
    SUBCASE("checkerboard keeps the even lattice") {
        // 8^3 cells: stride-2 picks land on even indices 0,2,..,8 on every axis
        const DatasetMeta meta = DatasetMeta::make({9, 9, 9}, {1, 1, 1}, {}, 4, {"q"}, 1);
        const auto grid = testing::make_grid(meta.dims, 1, [](std::size_t, auto x, auto y, auto z) {
            return double((x + y + z) % 2);
        });
        std::vector<BlockData> kids;
        for (const NodeId& c : meta.children(meta.root())) kids.push_back(build_leaf(grid, meta, c, 0));
        const BlockData p = downsample(kids, meta.root(), meta);
        for (float v : p.samples) CHECK(v == 0.0f);
    }
    SUBCASE("inconsistent child set") {
        const DatasetMeta meta = DatasetMeta::make({17, 17, 17}, {1, 1, 1}, {}, 4, {"q"}, 1);
        const auto grid = testing::make_grid(meta.dims, 1, [](auto...) { return 1.0; });
        std::vector<BlockData> kids;
        for (const NodeId& c : meta.children(NodeId{1, 0, 0, 0})) kids.push_back(build_leaf(grid, meta, c, 0));
        CHECK_THROWS_AS(downsample(kids, NodeId{1, 1, 0, 0}, meta), Error);
        kids.pop_back();
        CHECK_THROWS_AS(downsample(kids, NodeId{1, 0, 0, 0}, meta), Error);
    }
}

TEST_CASE("overhead ratio") {
    CHECK(overhead_ratio_for_blocks({1, 1, 1}) == 0.0);
    // 2048 + 256 + 32 + 4 + 1 inner nodes over 32*32*16 leaves
    CHECK(overhead_ratio_for_blocks({32, 32, 16}) == doctest::Approx(2341.0 / 16384.0).epsilon(1e-12));
    const double r = overhead_ratio_for_blocks({75, 75, 8});
    CHECK(r >= 0.14);
    CHECK(r <= 0.16);
    CHECK(overhead_ratio({513, 513, 257}, 16) == overhead_ratio_for_blocks({32, 32, 16}));
}

TEST_CASE("build_octree payload counts and contents") {
    TempDir tmp;
    SUBCASE("41x41x21 at b=20 gives 5 payloads") {
        RawInfo info{{41, 41, 21}, {1, 1, 1}, {}, {"q"}, 1};
        testing::write_raw_dataset(tmp / "raw", info, [](auto...) { return 7.0; });
        const OctreeStore store = build_octree(tmp / "raw", tmp / "store", {20, 2, ""});
        CHECK(store.index(0).size() == 5);
        CHECK(store.id() == "store");
        for (std::uint32_t l = 0; l < store.meta().levels; ++l) {
            for (const NodeId& n : store.meta().level_nodes(l)) {
                for (float v : store.read(0, n).samples) CHECK(v == 7.0f);
            }
        }
    }
    SUBCASE("161^3 at b=20 gives 585 payloads") {
        RawInfo info{{161, 161, 161}, {1, 1, 1}, {}, {"q"}, 1};
        testing::write_raw_dataset(tmp / "raw", info, [](auto...) { return 0.0; });
        const OctreeStore store = build_octree(tmp / "raw", tmp / "store", {20, 0, ""});
        CHECK(store.index(0).size() == 512 + 64 + 8 + 1);
        const auto size = std::filesystem::file_size(store_timestep_path(tmp / "store", 0));
        CHECK(size == 4 + 8 * 585 + 585ull * 21 * 21 * 21 * 4);
    }
}

TEST_CASE("store payloads match leaf builds and the stride-2 oracle") {
    std::mt19937 rng(99);
    std::uniform_int_distribution<std::uint32_t> dim(2, 40);
    std::uniform_int_distribution<std::uint32_t> bs(2, 7);
    std::uniform_real_distribution<double> val(-5, 5);
    for (int trial = 0; trial < 12; ++trial) {
        TempDir tmp;
        RawInfo info{{dim(rng), dim(rng), dim(rng)}, {1, 1, 1}, {}, {"a", "b"}, 2};
        const std::uint32_t b = bs(rng);
        std::vector<float> noise(info.sample_count() * 4);
        for (auto& v : noise) v = static_cast<float>(val(rng));
        auto value = [&](std::size_t f, std::uint32_t t, std::uint32_t x, std::uint32_t y, std::uint32_t z) {
            const std::size_t k = x + std::size_t{info.dims[0]} * (y + std::size_t{info.dims[1]} * z);
            return noise[(f * 2 + t) * info.sample_count() + k];
        };
        testing::write_raw_dataset(tmp / "raw", info, value);
        const OctreeStore store = build_octree(tmp / "raw", tmp / "store", {b, 3, ""});
        const DatasetMeta& meta = store.meta();
        CHECK(store.index(0).size() == total_node_count(meta.blocks()));
        for (std::uint32_t t = 0; t < 2; ++t) {
            const GridTimestep grid = GridTimestep::open(tmp / "raw", info, t);
            for (std::uint32_t l = 0; l < meta.levels; ++l) {
                for (const NodeId& n : meta.level_nodes(l)) {
                    const BlockData block = store.read(t, n);
                    if (l == 0) CHECK(block.samples == build_leaf(grid, meta, n, t).samples);
                    bool ok = true;
                    for (std::uint32_t z = 0; z <= b && ok; ++z) {
                        for (std::uint32_t y = 0; y <= b && ok; ++y) {
                            for (std::uint32_t x = 0; x <= b && ok; ++x) {
                                for (std::size_t f = 0; f < 2; ++f) {
                                    ok = ok && block.at(f, x, y, z) == value(f, t, oracle_global(meta, n, 0, x),
                                                                             oracle_global(meta, n, 1, y),
                                                                             oracle_global(meta, n, 2, z));
                                }
                            }
                        }
                    }
                    CHECK_MESSAGE(ok, "node " << n.to_string() << " t=" << t);
                }
            }
        }
    }
}

TEST_CASE("build_octree is deterministic and flags incomplete timesteps") {
    TempDir tmp;
    RawInfo info{{23, 17, 30}, {0.5, 1, 2}, {1, 2, 3}, {"q", "r"}, 2};
    testing::write_raw_dataset(tmp / "raw", info, [](std::size_t f, auto t, auto x, auto y, auto z) {
        return std::sin(0.3 * x + 0.2 * y * (f + 1) + 0.1 * z + t);
    });
    build_octree(tmp / "raw", tmp / "store", {6, 4, "demo"});
    const std::string first = slurp(store_timestep_path(tmp / "store", 1));
    const std::string meta_first = slurp(tmp / "store" / "store.json");
    build_octree(tmp / "raw", tmp / "store", {6, 1, "demo"});
    CHECK(slurp(store_timestep_path(tmp / "store", 1)) == first);
    CHECK(slurp(tmp / "store" / "store.json") == meta_first);
    CHECK(first.substr(0, 4) == "STR1");

    std::ofstream(store_incomplete_marker(tmp / "store", 1)) << "x";
    CHECK_THROWS_AS(OctreeStore::open(tmp / "store"), IoError);
    std::filesystem::remove(store_incomplete_marker(tmp / "store", 1));
    CHECK_NOTHROW(OctreeStore::open(tmp / "store"));

    CHECK_THROWS_AS(build_octree(tmp / "missing", tmp / "other", {6, 1, ""}), IoError);
    CHECK_THROWS_AS(build_octree(tmp / "raw", tmp / "bad", {1, 1, ""}), Error);
}

TEST_CASE("store reads reject bad addresses") {
    TempDir tmp;
    RawInfo info{{9, 9, 9}, {1, 1, 1}, {}, {"q"}, 1};
    testing::write_raw_dataset(tmp / "raw", info, [](auto...) { return 1.0; });
    const OctreeStore store = build_octree(tmp / "raw", tmp / "s", {4, 1, ""});
    CHECK_THROWS_AS(store.read(1, NodeId{}), Error);
    CHECK_THROWS_AS(store.read(0, NodeId{0, 2, 0, 0}), Error);
    CHECK(store.read_count() == 0);
    store.read(0, NodeId{});
    CHECK(store.read_count() == 1);
}

TEST_CASE("synthetic generator") {
    TempDir tmp;
    SUBCASE("no blobs") {
        SynthSpec spec;
        spec.dims = {8, 9, 10};
        synth_generate(spec, tmp / "raw");
        const RawInfo info = read_raw_info(tmp / "raw");
        CHECK(info.fields == std::vector<std::string>{"q", "u", "v", "w"});
        const GridTimestep g = GridTimestep::open(tmp / "raw", info, 0);
        for (std::uint32_t z = 0; z < 10; ++z) CHECK(g.at(0, 3, 4, z) == 0.0f);
    }
    SUBCASE("blob peak and constant wind") {
        SynthSpec spec;
        spec.dims = {16, 16, 16};
        spec.spacing = {0.5, 0.5, 0.5};
        spec.timesteps = 3;
        spec.blobs.push_back(Blob{{2.5, 3.0, 4.0}, 1.5, 1.0, {0.5, 0, 0}});
        spec.wind.value = {1, 0, 0};
        synth_generate(spec, tmp / "raw");
        const RawInfo info = read_raw_info(tmp / "raw");
        const GridTimestep t0 = GridTimestep::open(tmp / "raw", info, 0);
        CHECK(t0.at(0, 5, 6, 8) == 1.0f);
        // drift 0.5/s for 2 s moves the peak by one world unit = two samples
        const GridTimestep t2 = GridTimestep::open(tmp / "raw", info, 2);
        CHECK(t2.at(0, 7, 6, 8) == 1.0f);
        for (const auto* g : {&t0, &t2}) {
            CHECK(g->at(1, 1, 2, 3) == 1.0f);
            CHECK(g->at(2, 9, 2, 3) == 0.0f);
            CHECK(g->at(3, 15, 15, 15) == 0.0f);
        }
    }
    SUBCASE("json round trip and validation") {
        const SynthSpec spec = SynthSpec::from_json_text(R"({
            "dims": [12, 12, 12], "timesteps": 2, "dt": 60,
            "blobs": [{"center": [5, 5, 5], "radius": 2, "amplitude": 3, "drift": [0.01, 0, 0]}],
            "wind": {"type": "rotation", "center": [6, 6, 0], "angular_velocity": 0.1}})");
        CHECK(spec.blobs.size() == 1);
        CHECK(spec.wind.kind == Wind::Kind::rotation);
        const SynthSpec again = SynthSpec::from_json_text(spec.to_json_text());
        CHECK(again.to_json_text() == spec.to_json_text());
        CHECK_THROWS_AS(SynthSpec::from_json_text(R"({"dims": [4, 12, 12]})"), Error);
        CHECK_THROWS_AS(SynthSpec::from_json_text(R"({"dims": [12, 12, 12], "blobs": [{"center": [0,0,0], "radius": 0}]})"),
                        Error);
    }
}
