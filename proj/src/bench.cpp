#include "dbsa/bench.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "dbsa/error.hpp"
#include "dbsa/metrics.hpp"

namespace dbsa {

namespace {

// Fixed-precision formatting so CSV output is stable across runs.
std::string fmt(double v, int precision = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

}  // namespace

std::string short_digest(const nlohmann::json& j) { return to_hex(sha256(j.dump())).substr(0, 16); }

MethodConfig bench_config(Method method, const MethodConfig& base, std::uint64_t seed) {
    MethodConfig cfg = base;
    cfg.method = method;
    cfg.seed = seed;
    cfg.grouping.seed = seed;
    if (method == Method::FixedICL) cfg.pattern = AttentionPattern::full();
    return cfg;
}

BenchResult run_bench(const ModelWeights& weights, const TaskSpec& task, const std::vector<Demonstration>& tests,
                      const std::vector<Method>& methods, const MethodConfig& base, std::size_t runs,
                      const std::string& dataset) {
    if (runs == 0) throw ValidationError("bench needs at least one run");
    if (methods.empty()) throw ValidationError("bench needs at least one method");
    BenchResult result;
    for (Method m : methods) {
        for (std::size_t r = 0; r < runs; ++r) {
            const std::uint64_t seed = base.seed + r;
            const MethodConfig cfg = bench_config(m, base, seed);
            Engine engine(weights, task, cfg);
            const Evaluation ev = evaluate(engine, tests);

            BenchRow row;
            row.method = method_name(m);
            row.dataset = dataset;
            row.seed = seed;
            row.config_digest = short_digest(cfg.to_json());
            row.accuracy = ev.accuracy;
            row.n_queries = tests.size();
            row.setup_attended_pairs = engine.setup().attended_pairs;
            row.cache_bytes = engine.pool() ? engine.setup().cache_bytes : 0;

            BenchTiming timing;
            timing.method = row.method;
            timing.seed = seed;
            timing.setup_seconds = engine.setup().seconds();
            const double n = std::max<double>(1.0, static_cast<double>(tests.size()));
            for (const auto& p : ev.predictions) {
                row.mean_attended_pairs += static_cast<double>(p.metrics.attended_pairs) / n;
                row.mean_attention_flops += static_cast<double>(p.metrics.attention_flops) / n;
                row.mean_context_tokens += static_cast<double>(p.metrics.context_tokens) / n;
                timing.per_query_seconds.push_back(p.metrics.total_seconds);
                timing.mean_retrieval_seconds += p.metrics.retrieval_seconds / n;
                timing.mean_assembly_seconds += p.metrics.assembly_seconds / n;
                timing.mean_scoring_seconds += p.metrics.scoring_seconds / n;
            }
            result.rows.push_back(std::move(row));
            result.timings.push_back(std::move(timing));
        }
    }
    return result;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
    std::ostringstream out;
    out << "method,dataset,seed,config_digest,accuracy,n_queries,mean_attended_pairs,mean_attention_flops,"
           "mean_context_tokens,setup_attended_pairs,cache_bytes\n";
    for (const auto& r : rows)
        out << r.method << ',' << r.dataset << ',' << r.seed << ',' << r.config_digest << ',' << fmt(r.accuracy) << ','
            << r.n_queries << ',' << fmt(r.mean_attended_pairs, 2) << ',' << fmt(r.mean_attention_flops, 1) << ','
            << fmt(r.mean_context_tokens, 2) << ',' << r.setup_attended_pairs << ',' << r.cache_bytes << '\n';
    return out.str();
}

nlohmann::json bench_json(const std::vector<BenchRow>& rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows)
        arr.push_back({{"method", r.method},
                       {"dataset", r.dataset},
                       {"seed", r.seed},
                       {"config_digest", r.config_digest},
                       {"accuracy", fmt(r.accuracy)},
                       {"n_queries", r.n_queries},
                       {"mean_attended_pairs", fmt(r.mean_attended_pairs, 2)},
                       {"mean_attention_flops", fmt(r.mean_attention_flops, 1)},
                       {"mean_context_tokens", fmt(r.mean_context_tokens, 2)},
                       {"setup_attended_pairs", r.setup_attended_pairs},
                       {"cache_bytes", r.cache_bytes}});
    return arr;
}

std::string bench_summary_csv(const std::vector<BenchRow>& rows) {
    std::map<std::pair<std::string, std::string>, std::vector<const BenchRow*>> groups;
    std::vector<std::pair<std::string, std::string>> order;
    for (const auto& r : rows) {
        auto key = std::make_pair(r.method, r.dataset);
        if (!groups.count(key)) order.push_back(key);
        groups[key].push_back(&r);
    }
    std::ostringstream out;
    out << "method,dataset,runs,accuracy_mean,accuracy_stdev,attended_pairs_mean,attended_pairs_stdev\n";
    for (const auto& key : order) {
        std::vector<double> acc, pairs;
        for (const auto* r : groups[key]) {
            acc.push_back(r->accuracy);
            pairs.push_back(r->mean_attended_pairs);
        }
        out << key.first << ',' << key.second << ',' << acc.size() << ',' << fmt(mean(acc)) << ',' << fmt(stdev(acc))
            << ',' << fmt(mean(pairs), 2) << ',' << fmt(stdev(pairs), 2) << '\n';
    }
    return out.str();
}

nlohmann::json timings_json(const std::vector<BenchTiming>& timings) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& t : timings)
        arr.push_back({{"method", t.method},
                       {"seed", t.seed},
                       {"setup_seconds", t.setup_seconds},
                       {"per_query_seconds", t.per_query_seconds},
                       {"mean_retrieval_seconds", t.mean_retrieval_seconds},
                       {"mean_assembly_seconds", t.mean_assembly_seconds},
                       {"mean_scoring_seconds", t.mean_scoring_seconds}});
    return {{"format", "dbsa-timings"}, {"runs", std::move(arr)}};
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out << "axis,value,variant,accuracy,mean_attended_pairs,mean_attention_flops,mean_context_tokens,token_sparsity,"
           "encode_pairs,selection_digest\n";
    for (const auto& r : rows)
        out << r.axis << ',' << r.value << ',' << r.variant << ',' << fmt(r.accuracy) << ','
            << fmt(r.mean_attended_pairs, 2) << ',' << fmt(r.mean_attention_flops, 1) << ','
            << fmt(r.mean_context_tokens, 2) << ',' << fmt(r.token_sparsity) << ',' << r.encode_pairs << ','
            << short_digest(nlohmann::json(r.selections)) << '\n';
    return out.str();
}

nlohmann::json ablation_json(const std::vector<AblationRow>& rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows)
        arr.push_back({{"axis", r.axis},
                       {"value", r.value},
                       {"variant", r.variant},
                       {"accuracy", fmt(r.accuracy)},
                       {"mean_attended_pairs", fmt(r.mean_attended_pairs, 2)},
                       {"mean_attention_flops", fmt(r.mean_attention_flops, 1)},
                       {"mean_context_tokens", fmt(r.mean_context_tokens, 2)},
                       {"token_sparsity", fmt(r.token_sparsity)},
                       {"encode_pairs", r.encode_pairs},
                       {"predictions", r.predictions},
                       {"selections", r.selections}});
    return arr;
}

std::vector<AmortizedPoint> amortize_curve(const nlohmann::json& timings, const std::vector<std::uint64_t>& requests) {
    if (!timings.is_object() || timings.value("format", "") != "dbsa-timings")
        throw ValidationError("amortize expects a timings.json produced by bench");
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> per_method;
    std::vector<std::string> order;
    for (const auto& run : timings.at("runs")) {
        const auto method = run.at("method").get<std::string>();
        if (!per_method.count(method)) order.push_back(method);
        auto& [setups, queries] = per_method[method];
        setups.push_back(run.at("setup_seconds").get<double>());
        for (double q : run.at("per_query_seconds")) queries.push_back(q);
    }
    std::vector<AmortizedPoint> points;
    for (const auto& method : order) {
        const auto& [setups, queries] = per_method[method];
        const double setup = mean(setups), query = mean(queries);
        for (auto n : requests) points.push_back({method, n, setup, query, amortized_cost(setup, query, n)});
    }
    return points;
}

std::string amortize_csv(const std::vector<AmortizedPoint>& points) {
    std::ostringstream out;
    out << "method,requests,setup_seconds,mean_query_seconds,amortized_seconds\n";
    for (const auto& p : points)
        out << p.method << ',' << p.requests << ',' << fmt(p.setup_seconds, 9) << ',' << fmt(p.mean_query_seconds, 9)
            << ',' << fmt(p.amortized_seconds, 9) << '\n';
    return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << text;
}

}  // namespace dbsa
