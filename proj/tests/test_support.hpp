#pragma once

#include <cstdint>
#include <vector>

#include "dbsa/model.hpp"
#include "dbsa/rng.hpp"
#include "dbsa/tensor.hpp"

namespace dbsa::testing {

inline Tensor random_tensor(std::vector<std::size_t> dims, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
    Tensor t(std::move(dims));
    Rng rng(seed);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

inline ModelConfig tiny_config(int d = 32, int layers = 2, int heads = 4, int kv_heads = 2, int ffn = 64) {
    ModelConfig c;
    c.d_model = d;
    c.n_layers = layers;
    c.n_heads = heads;
    c.n_kv_heads = kv_heads;
    c.head_dim = d / heads;
    c.ffn_dim = ffn;
    return c;
}

inline std::vector<std::int32_t> random_ids(std::size_t n, std::uint64_t seed, int vocab = 256) {
    Rng rng(seed);
    std::vector<std::int32_t> ids(n);
    for (auto& id : ids) id = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(vocab)));
    return ids;
}

}  // namespace dbsa::testing
