#include "dbsa/attention.hpp"

#include <cmath>
#include <vector>

#include "dbsa/error.hpp"

namespace dbsa {

namespace {

void check(const Tensor& q, const Tensor& keys, const Tensor& values, const Mask2D& mask, AttentionShape s) {
    if (s.n_heads == 0 || s.n_kv_heads == 0 || s.head_dim == 0 || s.n_heads % s.n_kv_heads != 0)
        throw ConfigError("attention: invalid head configuration");
    if (q.rank() != 2 || q.dim(1) != s.n_heads * s.head_dim) throw ShapeError("attention: bad query shape");
    if (keys.rank() != 2 || keys.dim(1) != s.n_kv_heads * s.head_dim) throw ShapeError("attention: bad key shape");
    if (values.dims() != keys.dims()) throw ShapeError("attention: keys and values differ in shape");
    if (mask.rows() != q.dim(0) || mask.cols() != keys.dim(0)) throw ShapeError("attention: mask shape mismatch");
    for (std::size_t r = 0; r < mask.rows(); ++r) {
        bool any = false;
        for (auto b : mask.row(r)) any = any || b;
        if (!any) throw MaskError("attention: query row " + std::to_string(r) + " has no allowed key");
    }
}

// One (head, row) output vector.
void attend_row(const Tensor& q, const Tensor& keys, const Tensor& values, const Mask2D& mask, AttentionShape s,
                std::size_t head, std::size_t row, std::vector<float>& scores, float* out) {
    const std::size_t hd = s.head_dim;
    const std::size_t kv_head = head / (s.n_heads / s.n_kv_heads);
    const std::size_t cols = keys.dim(0);
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
    const float* qv = q.data().data() + row * q.dim(1) + head * hd;
    const auto allowed = mask.row(row);
    scores.assign(cols, 0.0f);
    for (std::size_t c = 0; c < cols; ++c) {
        if (!allowed[c]) continue;
        const float* kv = keys.data().data() + c * keys.dim(1) + kv_head * hd;
        float dot = 0.0f;
        for (std::size_t d = 0; d < hd; ++d) dot += qv[d] * kv[d];
        scores[c] = dot * scale;
    }
    softmax_masked_row(scores, allowed);
    for (std::size_t d = 0; d < hd; ++d) out[d] = 0.0f;
    for (std::size_t c = 0; c < cols; ++c) {
        if (!allowed[c]) continue;
        const float p = scores[c];
        const float* vv = values.data().data() + c * values.dim(1) + kv_head * hd;
        for (std::size_t d = 0; d < hd; ++d) out[d] += p * vv[d];
    }
}

}  // namespace

Tensor attention(const Tensor& q, const Tensor& keys, const Tensor& values, const Mask2D& mask, AttentionShape s) {
    check(q, keys, values, mask, s);
    const std::size_t rows = q.dim(0);
    Tensor out({rows, s.n_heads * s.head_dim});
    const std::ptrdiff_t work = static_cast<std::ptrdiff_t>(rows * s.n_heads);
#pragma omp parallel num_threads(max_threads()) if (work * static_cast<std::ptrdiff_t>(keys.dim(0)) > 16384)
    {
        std::vector<float> scores;
#pragma omp for schedule(static)
        for (std::ptrdiff_t w = 0; w < work; ++w) {
            const std::size_t row = static_cast<std::size_t>(w) / s.n_heads;
            const std::size_t head = static_cast<std::size_t>(w) % s.n_heads;
            attend_row(q, keys, values, mask, s, head, row, scores,
                       out.data().data() + row * out.dim(1) + head * s.head_dim);
        }
    }
    return out;
}

namespace serial {

Tensor attention(const Tensor& q, const Tensor& keys, const Tensor& values, const Mask2D& mask, AttentionShape s) {
    check(q, keys, values, mask, s);
    const std::size_t rows = q.dim(0);
    Tensor out({rows, s.n_heads * s.head_dim});
    std::vector<float> scores;
    for (std::size_t row = 0; row < rows; ++row)
        for (std::size_t head = 0; head < s.n_heads; ++head)
            attend_row(q, keys, values, mask, s, head, row, scores,
                       out.data().data() + row * out.dim(1) + head * s.head_dim);
    return out;
}

}  // namespace serial

}  // namespace dbsa
