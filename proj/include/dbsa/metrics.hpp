#pragma once

#include <cstdint>
#include <vector>

#include "dbsa/model.hpp"

namespace dbsa {

struct FlopCount {
    std::uint64_t attention = 0;   // QK^T and AV products
    std::uint64_t projection = 0;  // QKV/O projections, FFN and LM head
    std::uint64_t total() const { return attention + projection; }
};

// attention = 2 * pairs * head_dim * n_heads * n_layers * 2;
// projection counts the dense matmuls run for `tokens` new tokens.
FlopCount flops_attention(std::uint64_t attended_pairs, std::uint64_t tokens, const ModelConfig& config);

// Efficiency ledger for one method run.
struct Metrics {
    double setup_seconds = 0.0;
    std::vector<double> per_query_seconds;
    std::vector<std::uint64_t> attended_tokens;
    std::vector<std::uint64_t> attention_flops;
    std::uint64_t cache_bytes = 0;

    std::uint64_t n_requests() const { return per_query_seconds.size(); }
    double mean_query_seconds() const;
    // setup / n + mean per-query latency
    double amortized(std::uint64_t n) const;
};

double amortized_cost(double setup_seconds, double mean_query_seconds, std::uint64_t n_requests);

double mean(const std::vector<double>& xs);
// Sample standard deviation (n - 1); 0 for fewer than two values.
double stdev(const std::vector<double>& xs);

}  // namespace dbsa
