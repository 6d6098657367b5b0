#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "dbsa/pipeline.hpp"

namespace dbsa {

// Deterministic part of a benchmark row. Wall-clock numbers live in
// BenchTiming so reports stay byte-reproducible.
struct BenchRow {
    std::string method;
    std::string dataset;
    std::uint64_t seed = 0;
    std::string config_digest;
    double accuracy = 0.0;
    std::size_t n_queries = 0;
    double mean_attended_pairs = 0.0;
    double mean_attention_flops = 0.0;
    double mean_context_tokens = 0.0;
    std::uint64_t setup_attended_pairs = 0;
    std::uint64_t cache_bytes = 0;
};

struct BenchTiming {
    std::string method;
    std::uint64_t seed = 0;
    double setup_seconds = 0.0;
    std::vector<double> per_query_seconds;
    double mean_retrieval_seconds = 0.0;
    double mean_assembly_seconds = 0.0;
    double mean_scoring_seconds = 0.0;
};

struct BenchResult {
    std::vector<BenchRow> rows;
    std::vector<BenchTiming> timings;
};

// Config a method runs with inside `bench`: FixedICL encodes its cache with
// dense attention; the others keep the base settings.
MethodConfig bench_config(Method method, const MethodConfig& base, std::uint64_t seed);

// One row per (method, run); run r uses seed base.seed + r.
BenchResult run_bench(const ModelWeights& weights, const TaskSpec& task, const std::vector<Demonstration>& tests,
                      const std::vector<Method>& methods, const MethodConfig& base, std::size_t runs,
                      const std::string& dataset);

std::string short_digest(const nlohmann::json& j);

std::string bench_csv(const std::vector<BenchRow>& rows);
nlohmann::json bench_json(const std::vector<BenchRow>& rows);
// Per-method mean/stdev over runs.
std::string bench_summary_csv(const std::vector<BenchRow>& rows);
nlohmann::json timings_json(const std::vector<BenchTiming>& timings);

std::string ablation_csv(const std::vector<AblationRow>& rows);
nlohmann::json ablation_json(const std::vector<AblationRow>& rows);

struct AmortizedPoint {
    std::string method;
    std::uint64_t requests = 0;
    double setup_seconds = 0.0;
    double mean_query_seconds = 0.0;
    double amortized_seconds = 0.0;
};

// Cost-vs-requests curve from a timings document, one point per method per n.
std::vector<AmortizedPoint> amortize_curve(const nlohmann::json& timings, const std::vector<std::uint64_t>& requests);
std::string amortize_csv(const std::vector<AmortizedPoint>& points);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace dbsa
