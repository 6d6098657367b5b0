#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dbsa/tensor.hpp"

namespace dbsa {

// Block-level encoding pattern. Block 0 is the anchor (attention sink).
struct AttentionPattern {
    enum class Kind { Full, SinkPrevSelf, SinkSelf, SelfOnly };

    Kind kind = Kind::SinkPrevSelf;
    int local_blocks = 2;  // only meaningful for SinkPrevSelf

    static AttentionPattern full() { return {Kind::Full, 0}; }
    static AttentionPattern sink_prev_self(int j = 2) { return {Kind::SinkPrevSelf, j}; }
    static AttentionPattern sink_self() { return {Kind::SinkSelf, 0}; }
    static AttentionPattern self_only() { return {Kind::SelfOnly, 0}; }

    // "full" | "sink-prev-self" | "sink-self" | "self"
    static AttentionPattern parse(std::string_view name, int local_blocks = 2);
    std::string name() const;

    friend bool operator==(const AttentionPattern&, const AttentionPattern&) = default;
};

// B x B lower-triangular allowed matrix; row attends, column is attended.
class BlockMask {
public:
    BlockMask() = default;
    explicit BlockMask(std::size_t n_blocks) : n_(n_blocks), bits_(n_blocks * n_blocks, 0) {}

    std::size_t n_blocks() const { return n_; }
    bool allowed(std::size_t row, std::size_t col) const { return bits_[row * n_ + col] != 0; }
    void set(std::size_t row, std::size_t col) { bits_[row * n_ + col] = 1; }

    // Earlier blocks a row attends to, ascending (excludes the row itself).
    std::vector<std::size_t> context_blocks(std::size_t row) const;
    std::uint64_t allowed_pairs() const;
    std::uint64_t causal_pairs() const { return static_cast<std::uint64_t>(n_) * (n_ + 1) / 2; }

    friend bool operator==(const BlockMask&, const BlockMask&) = default;

private:
    std::size_t n_ = 0;
    std::vector<std::uint8_t> bits_;
};

BlockMask build_block_mask(std::size_t n_blocks, AttentionPattern pattern);

// Token-level expansion: cross-block pairs follow the block mask, pairs
// inside one block are causal.
class TokenMask {
public:
    TokenMask(BlockMask blocks, std::vector<std::size_t> tokens_per_block);

    const BlockMask& blocks() const { return blocks_; }
    std::size_t n_tokens() const { return starts_.back(); }
    std::size_t block_of(std::size_t token) const;
    std::size_t block_start(std::size_t b) const { return starts_[b]; }
    std::size_t block_length(std::size_t b) const { return starts_[b + 1] - starts_[b]; }

    bool allowed(std::size_t query, std::size_t key) const;
    std::uint64_t allowed_pairs() const;
    std::uint64_t causal_pairs() const;

    // Full n_tokens x n_tokens matrix.
    Mask2D materialize() const;
    // Mask for encoding block b in its own pass: columns are the tokens of
    // context_blocks(b) in ascending order, then block b itself.
    Mask2D block_pass(std::size_t b) const;

private:
    BlockMask blocks_;
    std::vector<std::size_t> starts_;
};

struct SparsityReport {
    std::uint64_t block_pairs_allowed = 0;
    std::uint64_t block_pairs_causal = 0;
    std::uint64_t token_pairs_allowed = 0;
    std::uint64_t token_pairs_causal = 0;
    std::uint64_t token_pairs_square = 0;
    double block_sparsity = 0.0;
    // 1 - allowed / dense-causal pairs.
    double token_sparsity = 0.0;
    // 1 - allowed / all n^2 pairs (counts the causal zeros as sparse).
    double token_sparsity_square = 0.0;
};

double token_sparsity(const TokenMask& mask);
SparsityReport sparsity_report(const TokenMask& mask);

}  // namespace dbsa
