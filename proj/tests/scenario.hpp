#pragma once

// Shared fixtures for the pipeline equivalence checks: a compact pool whose
// rendered prompt stays short enough for the dense oracle, plus helpers that
// run the same query through the engine and through the oracle.

#include <cstdint>
#include <string>
#include <vector>

#include "dbsa/pipeline.hpp"
#include "dbsa/rng.hpp"
#include "dbsa/tokenizer.hpp"
#include "oracle/oracle.hpp"

namespace dbsa::testing {

inline PromptTemplate compact_prompt() {
    PromptTemplate p;
    p.query_prefix = "";
    p.answer_prefix = ">";
    p.separator = "\n";
    return p;
}

// n_blocks * per_block demonstrations with 4 single-letter labels; each
// query holds a label-specific cue word and one filler word.
inline TaskSpec compact_task(std::size_t n_demos, std::uint64_t seed) {
    TaskSpec t;
    t.labels = {"a", "b", "c", "d"};
    t.prompt = compact_prompt();
    Rng rng(seed);
    for (std::size_t i = 0; i < n_demos; ++i) {
        const std::size_t l = rng.below(4);
        t.pool.push_back({"k" + std::to_string(l) + std::to_string(rng.below(3)) + " " + char('p' + rng.below(8)), t.labels[l]});
    }
    return t;
}

inline MethodConfig compact_config(std::size_t block_size, double ratio, std::uint64_t seed = 1) {
    MethodConfig c;
    c.method = Method::DBSA;
    c.block_size = block_size;
    c.ratio = ratio;
    c.pattern = AttentionPattern::sink_prev_self(2);
    c.grouping = {GroupingStrategy::Kind::Random, seed};
    c.seed = seed;
    return c;
}

inline std::vector<std::int32_t> query_tokens(const TaskSpec& task, const std::string& query) {
    return encode_bytes(task.prompt.render_query(query));
}

// Logits of the query rows scored against `context`.
inline Tensor engine_query_logits(const ModelWeights& w, const RotatedKV& context, const std::vector<std::int32_t>& q) {
    const auto start = static_cast<std::int64_t>(context.tokens());
    return forward_query(w, context, TokenSequence::sequential(q, start)).logits;
}

// One dense masked forward over the listed blocks followed by the query.
// Blocks follow the block predicate of `kind` (causal inside a block); query
// rows see every earlier token. Returns only the query rows.
inline std::vector<double> oracle_query_logits(const ModelWeights& w,
                                               const std::vector<std::vector<std::int32_t>>& blocks,
                                               oracle::PatternKind kind, std::size_t j,
                                               const std::vector<std::int32_t>& q) {
    std::vector<std::int32_t> ids;
    std::vector<std::size_t> owner;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        ids.insert(ids.end(), blocks[b].begin(), blocks[b].end());
        owner.insert(owner.end(), blocks[b].size(), b);
    }
    const std::size_t n_ctx = ids.size();
    ids.insert(ids.end(), q.begin(), q.end());
    std::vector<std::int64_t> pos(ids.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<std::int64_t>(i);
    auto mask = [&](std::size_t r, std::size_t c) {
        if (c > r) return false;
        if (r >= n_ctx) return true;
        return oracle::block_allowed(kind, j, owner[r], owner[c]);
    };
    const auto all = oracle::naive_masked_forward(w, ids, pos, mask);
    const std::size_t v = static_cast<std::size_t>(w.config().vocab_size);
    return {all.begin() + static_cast<std::ptrdiff_t>(n_ctx * v), all.end()};
}

inline std::vector<std::vector<std::int32_t>> block_tokens(const EncodedPool& pool, std::size_t first_n) {
    std::vector<std::vector<std::int32_t>> out;
    for (std::size_t b = 0; b < first_n; ++b) out.push_back(pool.blocks[b].tokens);
    return out;
}

inline Selection prefix_selection(std::size_t m) {
    Selection s;
    for (std::uint32_t i = 0; i < m; ++i) {
        s.units.push_back(i);
        s.scores.push_back(0.0);
    }
    return s;
}

}  // namespace dbsa::testing
