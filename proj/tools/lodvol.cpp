#include <array>
#include <csignal>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include <pthread.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "lodvol/explore.hpp"
#include "lodvol/octree.hpp"
#include "lodvol/server.hpp"
#include "lodvol/synth.hpp"

using namespace lodvol;
using nlohmann::json;

namespace {

int cmd_preprocess(const std::string& input, std::uint32_t block_size, const std::string& output, unsigned threads) {
    BuildOptions options;
    options.block_size = block_size;
    options.threads = threads;
    const OctreeStore store = build_octree(input, output, options);
    const DatasetMeta& meta = store.meta();
    std::cout << "store " << output << " (" << store.id() << "): " << meta.levels << " levels, "
              << meta.timesteps << " timesteps\n";
    std::uint64_t total = 0;
    for (std::uint32_t l = 0; l < meta.levels; ++l) {
        const Dims3 n = meta.nodes_at(l);
        const std::uint64_t count = std::uint64_t{n[0]} * n[1] * n[2];
        total += count;
        std::cout << "  level " << l << ": " << n[0] << "x" << n[1] << "x" << n[2] << " = " << count << " nodes\n";
    }
    std::cout << "  payloads per timestep: " << total << "\n";
    std::cout << "  overhead_ratio: " << overhead_ratio(meta.dims, meta.block_size) << "\n";
    return 0;
}

NodeId parse_node(const std::string& text) {
    std::array<long, 4> v{};
    char sep[3];
    std::istringstream in(text);
    if (!(in >> v[0] >> sep[0] >> v[1] >> sep[1] >> v[2] >> sep[2] >> v[3]) || sep[0] != ',' || sep[1] != ',' ||
        sep[2] != ',' || !in.eof()) {
        throw Error("node must be given as L,ix,iy,iz");
    }
    for (long x : v) {
        if (x < 0 || x > 65535) throw Error("node component out of range in '" + text + "'");
    }
    if (v[0] > 255) throw Error("node level out of range in '" + text + "'");
    return NodeId{static_cast<std::uint8_t>(v[0]), static_cast<std::uint16_t>(v[1]), static_cast<std::uint16_t>(v[2]),
                  static_cast<std::uint16_t>(v[3])};
}

int cmd_inspect(const std::string& path, const std::string& node_text, std::uint32_t timestep) {
    const OctreeStore store = OctreeStore::open(path);
    const DatasetMeta& meta = store.meta();
    json out;
    out["id"] = store.id();
    out["dims"] = meta.dims;
    out["spacing"] = {meta.spacing.x, meta.spacing.y, meta.spacing.z};
    out["origin"] = {meta.origin.x, meta.origin.y, meta.origin.z};
    out["block_size"] = meta.block_size;
    out["levels"] = meta.levels;
    out["fields"] = meta.fields;
    out["timesteps"] = meta.timesteps;
    json levels = json::array();
    std::uint64_t total = 0;
    for (std::uint32_t l = 0; l < meta.levels; ++l) {
        const Dims3 n = meta.nodes_at(l);
        const std::uint64_t count = std::uint64_t{n[0]} * n[1] * n[2];
        total += count;
        levels.push_back({{"level", l}, {"nodes", n}, {"count", count}});
    }
    out["per_level"] = levels;
    out["node_count"] = total;
    out["overhead_ratio"] = overhead_ratio(meta.dims, meta.block_size);

    if (!node_text.empty()) {
        const NodeId node = parse_node(node_text);
        if (!meta.is_valid(node)) throw Error("no node " + node.to_string() + " in this store");
        if (timestep >= meta.timesteps) throw Error("timestep " + std::to_string(timestep) + " out of range");
        const BlockData block = store.read(timestep, node);
        const Box box = node_bbox(node, meta);
        json stats = json::object();
        for (std::size_t f = 0; f < meta.fields.size(); ++f) {
            double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0.0;
            for (float v : block.field(f)) {
                lo = std::min(lo, double{v});
                hi = std::max(hi, double{v});
                sum += v;
            }
            stats[meta.fields[f]] = {{"min", lo}, {"max", hi}, {"mean", sum / double(block.samples_per_field())}};
        }
        out["node"] = {{"id", {node.level, node.ix, node.iy, node.iz}},
                       {"timestep", timestep},
                       {"bbox", {{"lo", {box.lo.x, box.lo.y, box.lo.z}}, {"hi", {box.hi.x, box.hi.y, box.hi.z}}}},
                       {"samples_per_field", block.samples_per_field()},
                       {"fields", stats}};
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_serve(ServerConfig config) {
    if (config.store.empty()) throw Error("no store given (--store or LODVOL_STORE)");
    // handle termination signals on this thread only
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    Server server(config);
    server.start();
    const DatasetMeta& meta = server.store().meta();
    std::cout << "serving " << server.store().id() << " (" << meta.dims[0] << "x" << meta.dims[1] << "x" << meta.dims[2]
              << ", " << meta.timesteps << " timesteps) on port " << server.port() << std::endl;
    int sig = 0;
    sigwait(&signals, &sig);
    std::cout << "shutting down" << std::endl;
    server.stop();
    return 0;
}

int cmd_explore(const std::string& script_path, const std::string& server, std::string report, bool websocket) {
    const ExploreScript script = ExploreScript::load(script_path);
    if (report.empty()) report = script.report;
    const ExploreResult result = run_explore(script, net::Endpoint::parse(server),
                                             websocket ? BackendClient::Transport::websocket : BackendClient::Transport::tcp);
    const std::string text = result.to_json();
    if (report.empty() || report == "-") {
        std::cout << text << "\n";
    } else {
        std::ofstream out(report);
        out << text << "\n";
        if (!out) throw IoError("cannot write " + report);
        std::cerr << "frames " << result.frames.size() << ", completed " << result.completions.size() << ", cut "
                  << result.cut_fresh << "/" << result.cut_nodes << " fresh, report " << report << "\n";
    }
    if (result.partial) {
        std::cerr << "partial run: " << result.failure << "\n";
        return 3;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Octree-based sub-volume extraction and streaming"};
    app.require_subcommand(1);

    auto* pre = app.add_subcommand("preprocess", "Build an octree store from a raw dataset");
    std::string pre_input, pre_output;
    std::uint32_t pre_block = 20;
    unsigned pre_threads = 0;
    pre->add_option("--input", pre_input, "Raw dataset directory (meta.json + t{T}_{field}.raw)")->required();
    pre->add_option("--block-size", pre_block, "Cells per block edge")->capture_default_str();
    pre->add_option("--output", pre_output, "Store directory")->required();
    pre->add_option("--threads", pre_threads, "Worker threads, 0 for all cores")->capture_default_str();

    auto* syn = app.add_subcommand("synth", "Generate a synthetic raw dataset");
    std::string syn_spec, syn_output;
    syn->add_option("--spec", syn_spec, "Generator description (JSON)")->required();
    syn->add_option("--output", syn_output, "Raw dataset directory")->required();

    auto* serve = app.add_subcommand("serve", "Run the extraction server");
    ServerConfig config;
    try {
        apply_environment(config);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::string store_path;
    std::size_t delay_ms = 0, stats_ms = 250;
    std::string web_root;
    serve->add_option("--store", store_path, "Store directory (env LODVOL_STORE)");
    serve->add_option("--listen", config.listen, "host:port (env LODVOL_LISTEN)")->capture_default_str();
    serve->add_option("--workers", config.workers, "Worker threads, 0 for all cores (env LODVOL_WORKERS)")
        ->capture_default_str();
    serve->add_option("--cache-bytes", config.cache_bytes, "Block cache capacity (env LODVOL_CACHE_BYTES)")
        ->capture_default_str();
    serve->add_option("--worker-delay-ms", delay_ms, "Artificial delay per work item, for testing");
    serve->add_option("--stats-interval-ms", stats_ms, "STATS cadence")->capture_default_str();
    serve->add_option("--web-root", web_root, "Serve static files from this directory");

    auto* exp = app.add_subcommand("explore", "Run a scripted headless session against a server");
    std::string exp_script, exp_server = "127.0.0.1:7878", exp_report;
    bool exp_ws = false;
    exp->add_option("--script", exp_script, "Explore script (JSON)")->required();
    exp->add_option("--server", exp_server, "host:port")->capture_default_str();
    exp->add_option("--report", exp_report, "Report path, '-' for stdout");
    exp->add_flag("--websocket", exp_ws, "Connect through the WebSocket upgrade");

    auto* ins = app.add_subcommand("inspect", "Print store metadata or one node's statistics");
    std::string ins_store, ins_node;
    std::uint32_t ins_timestep = 0;
    ins->add_option("--store", ins_store, "Store directory")->required();
    ins->add_option("--node", ins_node, "L,ix,iy,iz");
    ins->add_option("--timestep", ins_timestep, "Timestep for --node")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*pre) return cmd_preprocess(pre_input, pre_block, pre_output, pre_threads);
        if (*syn) {
            synth_generate(SynthSpec::load(syn_spec), syn_output);
            std::cout << "wrote " << syn_output << "\n";
            return 0;
        }
        if (*serve) {
            if (!store_path.empty()) config.store = store_path;
            config.worker_delay = std::chrono::milliseconds(delay_ms);
            config.stats_interval = std::chrono::milliseconds(stats_ms);
            config.web_root = web_root;
            return cmd_serve(config);
        }
        if (*exp) return cmd_explore(exp_script, exp_server, exp_report, exp_ws);
        if (*ins) return cmd_inspect(ins_store, ins_node, ins_timestep);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
