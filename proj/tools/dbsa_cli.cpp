// dbsa command-line entry point.
//
// Exit codes: 0 success, 2 invalid input (flags, files, formats, config
// mismatch), 1 anything else.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dbsa/bench.hpp"
#include "dbsa/error.hpp"
#include "dbsa/kv_store.hpp"
#include "dbsa/metrics.hpp"
#include "dbsa/model.hpp"
#include "dbsa/pipeline.hpp"
#include "dbsa/retrieval.hpp"
#include "dbsa/synthetic.hpp"
#include "dbsa/tensor.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Options {
    std::string model;
    std::string pool;
    std::string test;
    std::string labels;
    std::size_t block_size = 50;
    int local_blocks = 2;
    std::string pattern = "sink-prev-self";
    double ratio = 0.30;
    std::string granularity = "block";
    std::string grouping = "random";
    double swap_fraction = 0.10;
    std::string ordering = "in-order";
    std::uint64_t seed = 0;
    std::size_t runs = 5;
    std::string out;

    std::string method = "dbsa";
    std::string methods = "dbsa,fixed,reticl";
    std::string query;
    std::string cache;
    std::string axis = "all";
    std::string dataset;
    std::string timings;
    std::string requests = "1,10,100,1000,10000";

    // init-model
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int n_kv_heads = 2;
    int ffn_dim = 128;
    bool tie = false;

    // storage
    std::uint64_t layers = 32;
    std::uint64_t kv_heads = 8;
    std::uint64_t head_dim = 128;
    std::uint64_t bytes_per_value = 2;
    std::string tokens = "1,1000,30000";

    // synth
    std::size_t n_pool = 200;
    std::size_t n_tests = 20;
    std::size_t n_labels = 4;
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::vector<std::uint64_t> parse_counts(const std::string& s, const char* what) {
    std::vector<std::uint64_t> out;
    for (const auto& item : split_list(s)) {
        try {
            std::size_t used = 0;
            const long long v = std::stoll(item, &used);
            if (used != item.size() || v < 0) throw std::invalid_argument(item);
            out.push_back(static_cast<std::uint64_t>(v));
        } catch (const std::exception&) {
            throw dbsa::ValidationError(std::string("bad ") + what + " value '" + item + "'");
        }
    }
    if (out.empty()) throw dbsa::ValidationError(std::string("no ") + what + " values given");
    return out;
}

std::string iso_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void require(const std::string& value, const char* flag) {
    if (value.empty()) throw dbsa::ValidationError(std::string(flag) + " is required");
}

void write_json(const fs::path& path, const json& j) { dbsa::write_text(path, j.dump(2) + "\n"); }

dbsa::MethodConfig method_config(const Options& o) {
    dbsa::MethodConfig c;
    c.method = dbsa::parse_method(o.method);
    c.pattern = dbsa::AttentionPattern::parse(o.pattern, o.local_blocks);
    if (o.block_size < 1) throw dbsa::ValidationError("--block-size must be >= 1");
    c.block_size = o.block_size;
    if (!(o.ratio > 0.0) || o.ratio > 1.0) throw dbsa::ValidationError("--ratio must be in (0, 1]");
    c.ratio = o.ratio;
    c.granularity = dbsa::parse_granularity(o.granularity);
    c.grouping = dbsa::GroupingStrategy::parse(o.grouping, o.seed);
    if (o.swap_fraction < 0.0 || o.swap_fraction > 1.0) throw dbsa::ValidationError("--swap-fraction must be in [0, 1]");
    c.grouping.swap_fraction = o.swap_fraction;
    c.ordering = dbsa::OrderingStrategy::parse(o.ordering);
    c.seed = o.seed;
    return c;
}

dbsa::TaskSpec load_task(const Options& o) {
    require(o.pool, "--pool");
    require(o.labels, "--labels");
    dbsa::TaskSpec t;
    t.pool = dbsa::load_jsonl(o.pool);
    t.labels = dbsa::load_labels(o.labels);
    t.validate();
    return t;
}

dbsa::ModelWeights load_model(const Options& o) {
    require(o.model, "--model");
    return dbsa::load_weights(o.model);
}

// Run metadata that is allowed to differ between identical runs.
json manifest(const std::string& command, const std::vector<std::string>& argv, const std::string& started,
              double seconds, json extra = json::object()) {
    json m = {{"tool", "dbsa"},
              {"version", kVersion},
              {"command", command},
              {"argv", argv},
              {"started_at", started},
              {"finished_at", iso_now()},
              {"wall_seconds", seconds},
              {"threads", dbsa::max_threads()}};
    for (auto& [k, v] : extra.items()) m[k] = v;
    return m;
}

// SHA-256 of every input file that was given.
json input_digests(const Options& o) {
    json d = json::object();
    for (const auto& [flag, path] : {std::pair{"model", &o.model}, {"pool", &o.pool}, {"test", &o.test}, {"labels", &o.labels}}) {
        if (path->empty()) continue;
        std::ifstream in(*path, std::ios::binary);
        const std::string bytes{std::istreambuf_iterator<char>(in), {}};
        d[flag] = dbsa::to_hex(dbsa::sha256(bytes));
    }
    return d;
}

json run_inputs(const Options& o, const dbsa::MethodConfig& cfg, std::vector<std::uint64_t> seeds) {
    return {{"config", cfg.to_json()}, {"seeds", std::move(seeds)}, {"input_sha256", input_digests(o)}};
}

std::vector<std::uint64_t> seeds_for(const dbsa::MethodConfig& base, std::size_t runs) {
    std::vector<std::uint64_t> seeds;
    for (std::size_t r = 0; r < runs; ++r) seeds.push_back(base.seed + r);
    return seeds;
}

fs::path sidecar_path(const fs::path& cache) { return fs::path(cache.string() + ".index.json"); }

// encode: pool -> cache file + retrieval sidecar.
int cmd_encode(const Options& o, const std::vector<std::string>& argv) {
    const auto started = iso_now();
    const auto t0 = std::chrono::steady_clock::now();
    require(o.out, "--out");
    const dbsa::ModelWeights w = load_model(o);
    const dbsa::TaskSpec task = load_task(o);
    dbsa::MethodConfig cfg = method_config(o);
    cfg.method = dbsa::Method::DBSA;
    const dbsa::EncodedPool pool = dbsa::encode_pool(w, task, cfg);

    const fs::path out = o.out;
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    dbsa::serialize(pool.cache, out);
    json sidecar = {{"format", "dbsa-pool-index"},
                    {"config", cfg.to_json()},
                    {"model_config", w.config().to_json()},
                    {"model_checksum", dbsa::to_hex(w.checksum())},
                    {"partition", pool.partition},
                    {"index", pool.index.to_json()}};
    write_json(sidecar_path(out), sidecar);

    std::vector<std::size_t> lengths;
    for (const auto& b : pool.cache.blocks()) lengths.push_back(b.token_count);
    const auto report = dbsa::sparsity_report(dbsa::TokenMask(dbsa::build_block_mask(lengths.size(), cfg.pattern), lengths));
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(fs::path(out.string() + ".manifest.json"),
               manifest("encode", argv, started, seconds,
                        {{"encode_seconds", pool.setup.encode_seconds},
                         {"index_seconds", pool.setup.index_seconds},
                         {"run", run_inputs(o, cfg, {cfg.seed})}}));

    json summary = {{"cache", out.string()},
                    {"blocks", pool.cache.n_blocks()},
                    {"examples", pool.cache.n_examples()},
                    {"tokens", pool.cache.total_tokens()},
                    {"file_bytes", fs::file_size(out)},
                    {"attended_pairs", pool.setup.attended_pairs},
                    {"token_sparsity", report.token_sparsity},
                    {"token_sparsity_square", report.token_sparsity_square}};
    std::cout << summary.dump(2) << "\n";
    return 0;
}

// Rebuilds an encoded pool from a cache file and its sidecar, checking it
// matches the pool dataset and model.
std::shared_ptr<const dbsa::EncodedPool> load_encoded_pool(const dbsa::ModelWeights& w, const dbsa::TaskSpec& task,
                                                           const fs::path& cache_path, dbsa::MethodConfig& cfg) {
    auto pool = std::make_shared<dbsa::EncodedPool>();
    pool->cache = dbsa::deserialize(cache_path, w.config());
    json side;
    {
        std::ifstream in(sidecar_path(cache_path));
        if (!in) throw dbsa::ValidationError("missing index sidecar " + sidecar_path(cache_path).string());
        try {
            side = json::parse(in);
        } catch (const json::exception& e) {
            throw dbsa::FormatError(std::string("index sidecar: ") + e.what());
        }
    }
    try {
        if (side.at("format").get<std::string>() != "dbsa-pool-index") throw dbsa::FormatError("not a pool index sidecar");
        const json& c = side.at("config");
        cfg.pattern = dbsa::AttentionPattern::parse(c.at("pattern").get<std::string>(), c.at("local_blocks").get<int>());
        cfg.block_size = c.at("block_size").get<std::size_t>();
        pool->partition = side.at("partition").get<dbsa::BlockPartition>();
        pool->index = dbsa::Bm25Index::from_json(side.at("index"));
    } catch (const json::exception& e) {
        throw dbsa::FormatError(std::string("index sidecar: ") + e.what());
    }
    if (pool->partition.size() != pool->cache.n_blocks())
        throw dbsa::CompatibilityError("sidecar partition does not match the cache block table");
    for (const auto& ids : pool->partition)
        for (auto i : ids)
            if (i >= task.pool.size()) throw dbsa::CompatibilityError("cache was encoded from a larger pool");
    pool->blocks = dbsa::render_blocks(task, pool->partition);
    for (std::size_t b = 0; b < pool->blocks.size(); ++b)
        if (dbsa::sha256(pool->blocks[b].text) != pool->cache.block(b).text_digest)
            throw dbsa::CompatibilityError("pool dataset does not match the encoded cache (block " + std::to_string(b) + ")");
    for (const auto& ids : pool->partition) pool->example_order.insert(pool->example_order.end(), ids.begin(), ids.end());
    return pool;
}

int cmd_infer(const Options& o, const std::vector<std::string>&) {
    require(o.query, "--query");
    const dbsa::ModelWeights w = load_model(o);
    const dbsa::TaskSpec task = load_task(o);
    dbsa::MethodConfig cfg = method_config(o);
    std::unique_ptr<dbsa::Engine> engine;
    if (!o.cache.empty()) {
        if (cfg.method != dbsa::Method::DBSA && cfg.method != dbsa::Method::FixedICL)
            throw dbsa::ValidationError("--cache only applies to the dbsa and fixed methods");
        auto pool = load_encoded_pool(w, task, o.cache, cfg);
        engine = std::make_unique<dbsa::Engine>(w, task, cfg, pool);
    } else {
        engine = std::make_unique<dbsa::Engine>(w, task, cfg);
    }
    const dbsa::Prediction p = engine->infer(o.query);
    json scores = json::object();
    for (std::size_t i = 0; i < task.labels.size(); ++i) scores[task.labels[i]] = p.label_scores[i];
    json out = {{"query", o.query},
                {"method", dbsa::method_name(cfg.method)},
                {"label", p.label},
                {"label_scores", scores},
                {"selected_units", p.metrics.selected_units},
                {"context_tokens", p.metrics.context_tokens},
                {"attended_pairs", p.metrics.attended_pairs},
                {"attention_flops", p.metrics.attention_flops},
                {"seconds",
                 {{"retrieval", p.metrics.retrieval_seconds},
                  {"assembly", p.metrics.assembly_seconds},
                  {"scoring", p.metrics.scoring_seconds},
                  {"total", p.metrics.total_seconds}}}};
    std::cout << out.dump(2) << "\n";
    return 0;
}

int cmd_bench(const Options& o, const std::vector<std::string>& argv) {
    const auto started = iso_now();
    const auto t0 = std::chrono::steady_clock::now();
    require(o.test, "--test");
    require(o.out, "--out");
    const dbsa::ModelWeights w = load_model(o);
    const dbsa::TaskSpec task = load_task(o);
    const auto tests = dbsa::load_jsonl(o.test);
    std::vector<dbsa::Method> methods;
    for (const auto& m : split_list(o.methods)) methods.push_back(dbsa::parse_method(m));
    const dbsa::MethodConfig base = method_config(o);
    const std::string dataset = o.dataset.empty() ? fs::path(o.test).stem().string() : o.dataset;
    const dbsa::BenchResult r = dbsa::run_bench(w, task, tests, methods, base, o.runs, dataset);

    const fs::path out = o.out;
    fs::create_directories(out);
    dbsa::write_text(out / "report.csv", dbsa::bench_csv(r.rows));
    write_json(out / "report.json", dbsa::bench_json(r.rows));
    dbsa::write_text(out / "summary.csv", dbsa::bench_summary_csv(r.rows));
    write_json(out / "timings.json", dbsa::timings_json(r.timings));
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(out / "manifest.json", manifest("bench", argv, started, seconds,
                                               {{"model_checksum", dbsa::to_hex(w.checksum())},
                                                {"dataset", dataset},
                                                {"run", run_inputs(o, base, seeds_for(base, o.runs))}}));
    std::cout << dbsa::bench_summary_csv(r.rows);
    return 0;
}

int cmd_ablate(const Options& o, const std::vector<std::string>& argv) {
    const auto started = iso_now();
    const auto t0 = std::chrono::steady_clock::now();
    require(o.test, "--test");
    require(o.out, "--out");
    const dbsa::ModelWeights w = load_model(o);
    const dbsa::TaskSpec task = load_task(o);
    const auto tests = dbsa::load_jsonl(o.test);
    const dbsa::MethodConfig base = method_config(o);
    std::vector<dbsa::AblationAxis> axes;
    if (o.axis == "all") {
        axes = {dbsa::AblationAxis::Pattern, dbsa::AblationAxis::Granularity, dbsa::AblationAxis::Grouping,
                dbsa::AblationAxis::Ordering};
    } else {
        for (const auto& a : split_list(o.axis)) axes.push_back(dbsa::parse_axis(a));
    }
    std::vector<dbsa::AblationRow> rows;
    for (auto axis : axes) {
        auto part = dbsa::run_ablation(w, task, tests, axis, dbsa::full_grid(axis), base);
        rows.insert(rows.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    const fs::path out = o.out;
    fs::create_directories(out);
    dbsa::write_text(out / "ablation.csv", dbsa::ablation_csv(rows));
    write_json(out / "ablation.json", dbsa::ablation_json(rows));
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(out / "manifest.json",
               manifest("ablate", argv, started, seconds,
                        {{"model_checksum", dbsa::to_hex(w.checksum())}, {"run", run_inputs(o, base, {base.seed})}}));
    std::cout << dbsa::ablation_csv(rows);
    return 0;
}

int cmd_storage(const Options& o, const std::vector<std::string>&) {
    dbsa::KVShape shape{o.layers, o.kv_heads, o.head_dim};
    if (!o.model.empty()) {
        const auto& c = dbsa::load_weights(o.model).config();
        shape = {static_cast<std::uint64_t>(c.n_layers), static_cast<std::uint64_t>(c.n_kv_heads),
                 static_cast<std::uint64_t>(c.head_dim)};
    }
    if (shape.n_layers == 0 || shape.n_kv_heads == 0 || shape.head_dim == 0)
        throw dbsa::ValidationError("layers, kv heads and head dim must be positive");
    const auto per_token = dbsa::storage_bytes(shape, 1, o.bytes_per_value);
    std::printf("shape: layers=%llu kv_heads=%llu head_dim=%llu bytes_per_value=%llu\n",
                static_cast<unsigned long long>(shape.n_layers), static_cast<unsigned long long>(shape.n_kv_heads),
                static_cast<unsigned long long>(shape.head_dim), static_cast<unsigned long long>(o.bytes_per_value));
    std::printf("bytes_per_token: %llu (%.6f MiB)\n", static_cast<unsigned long long>(per_token),
                static_cast<double>(per_token) / (1024.0 * 1024.0));
    std::printf("tokens,bytes,MiB,GiB\n");
    for (auto n : parse_counts(o.tokens, "--tokens")) {
        const auto bytes = dbsa::storage_bytes(shape, n, o.bytes_per_value);
        std::printf("%llu,%llu,%.6f,%.6f\n", static_cast<unsigned long long>(n), static_cast<unsigned long long>(bytes),
                    static_cast<double>(bytes) / (1024.0 * 1024.0), static_cast<double>(bytes) / (1024.0 * 1024.0 * 1024.0));
    }
    return 0;
}

int cmd_amortize(const Options& o, const std::vector<std::string>&) {
    require(o.timings, "--timings");
    json t;
    {
        std::ifstream in(o.timings);
        if (!in) throw dbsa::ValidationError("cannot open timings file " + o.timings);
        try {
            t = json::parse(in);
        } catch (const json::exception& e) {
            throw dbsa::FormatError(std::string("timings file: ") + e.what());
        }
    }
    std::vector<std::uint64_t> ns = parse_counts(o.requests, "--requests");
    for (auto n : ns)
        if (n == 0) throw dbsa::ValidationError("--requests values must be >= 1");
    std::vector<dbsa::AmortizedPoint> points;
    try {
        points = dbsa::amortize_curve(t, ns);
    } catch (const json::exception& e) {
        throw dbsa::FormatError(std::string("timings file: ") + e.what());
    }
    const std::string csv = dbsa::amortize_csv(points);
    if (!o.out.empty()) dbsa::write_text(o.out, csv);
    std::cout << csv;
    return 0;
}

int cmd_init_model(const Options& o, const std::vector<std::string>&) {
    require(o.out, "--out");
    dbsa::ModelConfig c;
    c.d_model = o.d_model;
    c.n_layers = o.n_layers;
    c.n_heads = o.n_heads;
    c.n_kv_heads = o.n_kv_heads;
    c.head_dim = o.n_heads > 0 ? o.d_model / o.n_heads : 0;
    c.ffn_dim = o.ffn_dim;
    c.tie_embeddings = o.tie;
    const dbsa::ModelWeights w = dbsa::init_random(c, o.seed);
    dbsa::save_weights(w, o.out);
    std::cout << json{{"model", o.out}, {"config", c.to_json()}, {"checksum", dbsa::to_hex(w.checksum())}}.dump(2) << "\n";
    return 0;
}

int cmd_synth(const Options& o, const std::vector<std::string>&) {
    require(o.out, "--out");
    const dbsa::SyntheticTask s = dbsa::make_recall_task(o.n_pool, o.n_tests, o.n_labels, o.seed);
    const fs::path out = o.out;
    fs::create_directories(out);
    dbsa::save_jsonl(s.task.pool, out / "pool.jsonl");
    dbsa::save_jsonl(s.tests, out / "test.jsonl");
    std::string labels;
    for (const auto& l : s.task.labels) labels += l + "\n";
    dbsa::write_text(out / "labels.txt", labels);
    std::cout << "wrote " << (out / "pool.jsonl").string() << ", " << (out / "test.jsonl").string() << ", "
              << (out / "labels.txt").string() << "\n";
    return 0;
}

void add_shared(CLI::App* app, Options& o) {
    app->add_option("--model", o.model, "Model weight file");
    app->add_option("--pool", o.pool, "Demonstration pool (JSON lines with query/answer)");
    app->add_option("--test", o.test, "Test queries (JSON lines with query/answer)");
    app->add_option("--labels", o.labels, "Label set, one per line");
    app->add_option("--block-size", o.block_size, "Demonstrations per block");
    app->add_option("--local-blocks", o.local_blocks, "Preceding blocks attended under sink-prev-self");
    app->add_option("--pattern", o.pattern, "full | sink-prev-self | sink-self | self");
    app->add_option("--ratio", o.ratio, "Retrieval ratio in (0, 1]");
    app->add_option("--granularity", o.granularity, "block | example");
    app->add_option("--grouping", o.grouping, "random | clustered | clustered-diverse");
    app->add_option("--swap-fraction", o.swap_fraction, "Fraction of examples displaced by clustered-diverse");
    app->add_option("--ordering", o.ordering, "in-order | low-to-high | reverse");
    app->add_option("--seed", o.seed, "Seed");
    app->add_option("--runs", o.runs, "Runs per method (seeds seed..seed+runs-1)");
    app->add_option("--out", o.out, "Output path");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dynamic block-sparse attention engine and benchmark harness"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    Options o;

    auto* encode = app.add_subcommand("encode", "Encode a pool into a segmented KV cache and retrieval index");
    add_shared(encode, o);

    auto* infer = app.add_subcommand("infer", "Answer a single query");
    add_shared(infer, o);
    infer->add_option("--query", o.query, "Query text");
    infer->add_option("--method", o.method, "dbsa | fixed | reticl | zeroshot");
    infer->add_option("--cache", o.cache, "Reuse a cache written by encode");

    auto* bench = app.add_subcommand("bench", "Run methods over a test set and write reports");
    add_shared(bench, o);
    bench->add_option("--methods", o.methods, "Comma-separated methods");
    bench->add_option("--dataset", o.dataset, "Dataset name in reports (default: test file stem)");

    auto* ablate = app.add_subcommand("ablate", "Sweep one or more ablation axes");
    add_shared(ablate, o);
    ablate->add_option("--axis", o.axis, "pattern | granularity | grouping | ordering | all (comma-separated)");

    auto* storage = app.add_subcommand("storage", "KV storage bytes per token for a model shape");
    storage->add_option("--model", o.model, "Take the shape from a model file");
    storage->add_option("--layers", o.layers, "Layers");
    storage->add_option("--kv-heads", o.kv_heads, "Key/value heads");
    storage->add_option("--head-dim", o.head_dim, "Head dimension");
    storage->add_option("--bytes-per-value", o.bytes_per_value, "2 or 4");
    storage->add_option("--tokens", o.tokens, "Comma-separated token counts");

    auto* amortize = app.add_subcommand("amortize", "Amortized cost vs request count from bench timings");
    amortize->add_option("--timings", o.timings, "timings.json written by bench");
    amortize->add_option("--requests", o.requests, "Comma-separated request counts");
    amortize->add_option("--out", o.out, "Optional CSV output path");

    auto* init = app.add_subcommand("init-model", "Write a randomly initialized model");
    init->add_option("--out", o.out, "Output weight file");
    init->add_option("--seed", o.seed, "Seed");
    init->add_option("--d-model", o.d_model, "Model width");
    init->add_option("--layers", o.n_layers, "Layers");
    init->add_option("--heads", o.n_heads, "Query heads");
    init->add_option("--kv-heads", o.n_kv_heads, "Key/value heads");
    init->add_option("--ffn-dim", o.ffn_dim, "FFN hidden width");
    init->add_flag("--tie-embeddings", o.tie, "Share the embedding table with the LM head");

    auto* synth = app.add_subcommand("synth", "Write a synthetic associative-recall dataset");
    synth->add_option("--out", o.out, "Output directory");
    synth->add_option("--seed", o.seed, "Seed");
    synth->add_option("--pool-size", o.n_pool, "Pool demonstrations");
    synth->add_option("--test-size", o.n_tests, "Test queries");
    synth->add_option("--label-count", o.n_labels, "Labels (1-20)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const std::vector<std::string> args(argv + 1, argv + argc);
    try {
        if (encode->parsed()) return cmd_encode(o, args);
        if (infer->parsed()) return cmd_infer(o, args);
        if (bench->parsed()) return cmd_bench(o, args);
        if (ablate->parsed()) return cmd_ablate(o, args);
        if (storage->parsed()) return cmd_storage(o, args);
        if (amortize->parsed()) return cmd_amortize(o, args);
        if (init->parsed()) return cmd_init_model(o, args);
        if (synth->parsed()) return cmd_synth(o, args);
    } catch (const dbsa::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const dbsa::FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const dbsa::CompatibilityError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const dbsa::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
