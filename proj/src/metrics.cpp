#include "dbsa/metrics.hpp"

#include <cmath>
#include <numeric>

#include "dbsa/error.hpp"

namespace dbsa {

FlopCount flops_attention(std::uint64_t pairs, std::uint64_t tokens, const ModelConfig& c) {
    const auto d = static_cast<std::uint64_t>(c.d_model);
    const auto layers = static_cast<std::uint64_t>(c.n_layers);
    const std::uint64_t q_w = c.q_width(), kv_w = c.kv_width();
    const auto f = static_cast<std::uint64_t>(c.ffn_dim);
    FlopCount out;
    out.attention = 2 * pairs * static_cast<std::uint64_t>(c.head_dim) * static_cast<std::uint64_t>(c.n_heads) * layers * 2;
    const std::uint64_t per_token_layer = 2 * d * q_w + 2 * 2 * d * kv_w + 2 * q_w * d + 3 * 2 * d * f;
    out.projection = tokens * (layers * per_token_layer + 2 * d * static_cast<std::uint64_t>(c.vocab_size));
    return out;
}

double mean(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double stdev(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    const double m = mean(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

double amortized_cost(double setup_seconds, double mean_query_seconds, std::uint64_t n_requests) {
    if (n_requests == 0) throw ValidationError("amortized cost needs at least one request");
    return setup_seconds / static_cast<double>(n_requests) + mean_query_seconds;
}

double Metrics::mean_query_seconds() const { return mean(per_query_seconds); }

double Metrics::amortized(std::uint64_t n) const { return amortized_cost(setup_seconds, mean_query_seconds(), n); }

}  // namespace dbsa
