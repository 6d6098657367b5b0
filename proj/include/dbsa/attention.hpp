#pragma once

#include <cstddef>

#include "dbsa/tensor.hpp"

namespace dbsa {

struct AttentionShape {
    std::size_t n_heads = 0;
    std::size_t n_kv_heads = 0;
    std::size_t head_dim = 0;
};

// Grouped-query masked attention.
//   q:      [rows x n_heads*head_dim], already rotated
//   keys:   [cols x n_kv_heads*head_dim], already rotated
//   values: [cols x n_kv_heads*head_dim]
//   mask:   [rows x cols]
// Query head h reads KV head h / (n_heads / n_kv_heads). Only allowed
// columns are scored; reductions run in ascending column order.
Tensor attention(const Tensor& q, const Tensor& keys, const Tensor& values, const Mask2D& mask, AttentionShape shape);

namespace serial {
Tensor attention(const Tensor& q, const Tensor& keys, const Tensor& values, const Mask2D& mask, AttentionShape shape);
}

}  // namespace dbsa
