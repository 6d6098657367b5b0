#pragma once

// Reference implementations for differential tests. Nothing here calls the
// library's kernels: loops, rotary, normalization, softmax and BM25 are
// transcribed independently and evaluated in double precision.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dbsa/model.hpp"
#include "dbsa/tensor.hpp"

namespace dbsa::oracle {

struct OracleResult {
    std::vector<double> value;
    double max_abs_deviation = 0.0;
};

// Compares a subject tensor against reference values; the deviation is
// always recorded.
OracleResult compare(const std::vector<double>& reference, const Tensor& subject);
double max_abs_diff(const Tensor& a, const Tensor& b);

std::vector<double> naive_matmul(const Tensor& a, const Tensor& b);
std::vector<double> naive_softmax_row(const std::vector<double>& scores, const std::vector<bool>& allowed);

// allowed(query_index, key_index) over the full sequence.
using MaskFn = std::function<bool(std::size_t, std::size_t)>;

// Full-materialization masked forward: every layer builds the complete
// score matrix, masks it and normalizes it. Returns logits [n x vocab]
// row-major.
std::vector<double> naive_masked_forward(const ModelWeights& weights, const std::vector<std::int32_t>& ids,
                                         const std::vector<std::int64_t>& positions, const MaskFn& mask);

// Same semantics, evaluated one token at a time with scalar loops. Meant
// for short (<= 20 token) cross-checks of naive_masked_forward.
std::vector<double> scalar_forward(const ModelWeights& weights, const std::vector<std::int32_t>& ids,
                                   const std::vector<std::int64_t>& positions, const MaskFn& mask);

// Straight Robertson/Zaragoza BM25 over raw strings.
double bm25_reference(const std::vector<std::string>& corpus, const std::string& query, double k1, double b,
                      std::size_t doc);

enum class PatternKind { Full, SinkPrevSelf, SinkSelf, SelfOnly };

// Direct predicate from the pattern definition (0-based blocks, block 0 is the sink).
bool block_allowed(PatternKind kind, std::size_t j, std::size_t row, std::size_t col);
std::uint64_t enumerate_block_pairs(PatternKind kind, std::size_t j, std::size_t n_blocks);
// Exhaustive token-pair enumeration (within-block causal).
std::uint64_t enumerate_token_pairs(PatternKind kind, std::size_t j, const std::vector<std::size_t>& lengths);

}  // namespace dbsa::oracle
