#include "dbsa/sparse_mask.hpp"

#include <algorithm>

#include "dbsa/error.hpp"

namespace dbsa {

AttentionPattern AttentionPattern::parse(std::string_view name, int local_blocks) {
    if (local_blocks < 0) throw ValidationError("local block count must be >= 0");
    if (name == "full") return full();
    if (name == "sink-prev-self") return sink_prev_self(local_blocks);
    if (name == "sink-self") return sink_self();
    if (name == "self") return self_only();
    throw ValidationError("unknown attention pattern '" + std::string(name) + "'");
}

std::string AttentionPattern::name() const {
    switch (kind) {
        case Kind::Full: return "full";
        case Kind::SinkPrevSelf: return "sink-prev-self";
        case Kind::SinkSelf: return "sink-self";
        case Kind::SelfOnly: return "self";
    }
    return "unknown";
}

std::vector<std::size_t> BlockMask::context_blocks(std::size_t row) const {
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < row; ++c)
        if (allowed(row, c)) out.push_back(c);
    return out;
}

std::uint64_t BlockMask::allowed_pairs() const {
    return static_cast<std::uint64_t>(std::count(bits_.begin(), bits_.end(), 1));
}

BlockMask build_block_mask(std::size_t n_blocks, AttentionPattern pattern) {
    if (n_blocks < 1) throw ValidationError("block mask needs at least one block");
    if (pattern.local_blocks < 0) throw ValidationError("local block count must be >= 0");
    BlockMask m(n_blocks);
    const auto j = static_cast<std::size_t>(pattern.local_blocks);
    for (std::size_t i = 0; i < n_blocks; ++i) {
        m.set(i, i);
        switch (pattern.kind) {
            case AttentionPattern::Kind::Full:
                for (std::size_t c = 0; c < i; ++c) m.set(i, c);
                break;
            case AttentionPattern::Kind::SinkPrevSelf:
                m.set(i, 0);
                for (std::size_t c = i > j ? i - j : 0; c < i; ++c) m.set(i, c);
                break;
            case AttentionPattern::Kind::SinkSelf:
                m.set(i, 0);
                break;
            case AttentionPattern::Kind::SelfOnly:
                break;
        }
    }
    return m;
}

TokenMask::TokenMask(BlockMask blocks, std::vector<std::size_t> tokens_per_block) : blocks_(std::move(blocks)) {
    if (tokens_per_block.size() != blocks_.n_blocks()) throw ShapeError("token mask: one length per block required");
    starts_.assign(1, 0);
    for (auto t : tokens_per_block) {
        if (t == 0) throw ValidationError("token mask: block lengths must be positive");
        starts_.push_back(starts_.back() + t);
    }
}

std::size_t TokenMask::block_of(std::size_t token) const {
    auto it = std::upper_bound(starts_.begin(), starts_.end(), token);
    return static_cast<std::size_t>(it - starts_.begin()) - 1;
}

bool TokenMask::allowed(std::size_t query, std::size_t key) const {
    if (key > query) return false;
    const std::size_t bq = block_of(query), bk = block_of(key);
    return bq == bk || blocks_.allowed(bq, bk);
}

std::uint64_t TokenMask::allowed_pairs() const {
    std::uint64_t total = 0;
    for (std::size_t b = 0; b < blocks_.n_blocks(); ++b) {
        const std::uint64_t t = block_length(b);
        total += t * (t + 1) / 2;
        for (std::size_t c : blocks_.context_blocks(b)) total += t * block_length(c);
    }
    return total;
}

std::uint64_t TokenMask::causal_pairs() const {
    const std::uint64_t n = n_tokens();
    return n * (n + 1) / 2;
}

Mask2D TokenMask::materialize() const {
    const std::size_t n = n_tokens();
    Mask2D m(n, n);
    for (std::size_t q = 0; q < n; ++q) {
        const std::size_t bq = block_of(q);
        for (std::size_t c : blocks_.context_blocks(bq))
            for (std::size_t k = starts_[c]; k < starts_[c + 1]; ++k) m.set(q, k, true);
        for (std::size_t k = starts_[bq]; k <= q; ++k) m.set(q, k, true);
    }
    return m;
}

Mask2D TokenMask::block_pass(std::size_t b) const {
    std::size_t ctx = 0;
    for (std::size_t c : blocks_.context_blocks(b)) ctx += block_length(c);
    const std::size_t t = block_length(b);
    Mask2D m(t, ctx + t);
    for (std::size_t r = 0; r < t; ++r)
        for (std::size_t col = 0; col <= ctx + r; ++col) m.set(r, col, true);
    return m;
}

SparsityReport sparsity_report(const TokenMask& mask) {
    SparsityReport r;
    r.block_pairs_allowed = mask.blocks().allowed_pairs();
    r.block_pairs_causal = mask.blocks().causal_pairs();
    r.token_pairs_allowed = mask.allowed_pairs();
    r.token_pairs_causal = mask.causal_pairs();
    r.token_pairs_square = static_cast<std::uint64_t>(mask.n_tokens()) * mask.n_tokens();
    r.block_sparsity = 1.0 - static_cast<double>(r.block_pairs_allowed) / static_cast<double>(r.block_pairs_causal);
    r.token_sparsity = 1.0 - static_cast<double>(r.token_pairs_allowed) / static_cast<double>(r.token_pairs_causal);
    r.token_sparsity_square =
        1.0 - static_cast<double>(r.token_pairs_allowed) / static_cast<double>(r.token_pairs_square);
    return r;
}

double token_sparsity(const TokenMask& mask) { return sparsity_report(mask).token_sparsity; }

}  // namespace dbsa
