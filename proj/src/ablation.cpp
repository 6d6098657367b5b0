#include <algorithm>
#include <memory>

#include "dbsa/error.hpp"
#include "dbsa/metrics.hpp"
#include "dbsa/pipeline.hpp"
#include "dbsa/tokenizer.hpp"

namespace dbsa {

AblationAxis parse_axis(std::string_view name) {
    if (name == "pattern") return AblationAxis::Pattern;
    if (name == "granularity") return AblationAxis::Granularity;
    if (name == "grouping") return AblationAxis::Grouping;
    if (name == "ordering") return AblationAxis::Ordering;
    throw ValidationError("unknown ablation axis '" + std::string(name) + "'");
}

const char* axis_name(AblationAxis axis) {
    switch (axis) {
        case AblationAxis::Pattern: return "pattern";
        case AblationAxis::Granularity: return "granularity";
        case AblationAxis::Grouping: return "grouping";
        case AblationAxis::Ordering: return "ordering";
    }
    return "unknown";
}

std::vector<std::string> full_grid(AblationAxis axis) {
    switch (axis) {
        case AblationAxis::Pattern: return {"full", "sink-prev-self", "sink-self", "self"};
        case AblationAxis::Granularity: return {"block", "example"};
        case AblationAxis::Grouping: return {"random", "clustered", "clustered-diverse"};
        case AblationAxis::Ordering: return {"in-order", "low-to-high", "reverse"};
    }
    return {};
}

namespace {

AblationRow summarize(const Evaluation& ev, std::string axis, std::string value,
                      std::string variant) {
    AblationRow row;
    row.axis = std::move(axis);
    row.value = std::move(value);
    row.variant = std::move(variant);
    row.accuracy = ev.accuracy;
    const double n = std::max<double>(1.0, static_cast<double>(ev.predictions.size()));
    for (const auto& p : ev.predictions) {
        row.mean_attended_pairs += static_cast<double>(p.metrics.attended_pairs) / n;
        row.mean_attention_flops += static_cast<double>(p.metrics.attention_flops) / n;
        row.mean_context_tokens += static_cast<double>(p.metrics.context_tokens) / n;
        row.predictions.push_back(p.label);
        row.selections.push_back(p.metrics.selected_units);
    }
    return row;
}

double pool_sparsity(const EncodedPool& pool, AttentionPattern pattern) {
    std::vector<std::size_t> lengths;
    for (const auto& b : pool.cache.blocks()) lengths.push_back(b.token_count);
    return token_sparsity(TokenMask(build_block_mask(lengths.size(), pattern), lengths));
}

// Re-encodes the DBSA-selected units densely in the same order and scores
// against that context: the no-reuse counterpart of a DBSA row.
AblationRow standard_row(const ModelWeights& w, const TaskSpec& task, const std::vector<Demonstration>& tests,
                         const EncodedPool& pool, const AblationRow& dbsa_row, const std::string& value) {
    Evaluation ev;
    ev.predictions.resize(tests.size());
    std::vector<std::vector<std::int32_t>> labels;
    for (const auto& l : task.labels) labels.push_back(encode_bytes(task.prompt.render_label(l)));
    std::size_t correct = 0;
    for (std::size_t q = 0; q < tests.size(); ++q) {
        std::string text;
        for (auto u : dbsa_row.selections[q]) {
            if (pool.index.granularity() == Granularity::Block) {
                text += pool.blocks[u].text;
            } else {
                auto [b, e] = pool.cache.locate_example(u);
                text += task.prompt.render_demo(task.pool[pool.blocks[b].examples[e]]);
            }
        }
        EncodedContext ctx = encode_context(w, {encode_bytes(text)}, AttentionPattern::full());
        auto& p = ev.predictions[q];
        p.metrics.attended_pairs = ctx.attended_pairs;
        p.metrics.processed_tokens = ctx.tokens;
        p.metrics.context_tokens = ctx.kv.tokens();
        p.metrics.selected_units = dbsa_row.selections[q];
        const auto query_ids = encode_bytes(task.prompt.render_query(tests[q].query));
        for (const auto& label : labels) {
            const LabelScore s = score_label(w, ctx.kv, query_ids, label);
            p.label_scores.push_back(s.log_prob);
            p.metrics.attended_pairs += s.attended_pairs;
            p.metrics.processed_tokens += s.tokens;
        }
        p.metrics.attention_flops = flops_attention(p.metrics.attended_pairs, p.metrics.processed_tokens, w.config()).attention;
        p.label_index = best_label(p.label_scores, task.labels);
        p.label = task.labels[p.label_index];
        if (p.label == tests[q].answer) ++correct;
    }
    ev.accuracy = tests.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(tests.size());
    return summarize(ev, "granularity", value, "standard");
}

}  // namespace

std::vector<AblationRow> run_ablation(const ModelWeights& weights, const TaskSpec& task,
                                      const std::vector<Demonstration>& tests, AblationAxis axis,
                                      const std::vector<std::string>& grid, const MethodConfig& base) {
    if (grid.empty()) throw ValidationError("ablation grid is empty");
    const std::string axis_str = axis_name(axis);
    std::vector<AblationRow> rows;
    // Pools that only differ in retrieval settings share one encoding.
    std::shared_ptr<const EncodedPool> shared;
    auto base_pool = [&] {
        if (!shared) shared = std::make_shared<EncodedPool>(encode_pool(weights, task, base));
        return shared;
    };

    for (const auto& value : grid) {
        MethodConfig cfg = base;
        cfg.method = Method::DBSA;
        switch (axis) {
            case AblationAxis::Pattern: {
                // Queries attend to the full encoded context under each pattern.
                cfg.pattern = AttentionPattern::parse(value, base.pattern.local_blocks);
                cfg.method = Method::FixedICL;
                Engine engine(weights, task, cfg);
                AblationRow row = summarize(evaluate(engine, tests), axis_str, value, "full-cache");
                row.token_sparsity = pool_sparsity(*engine.pool(), cfg.pattern);
                row.encode_pairs = engine.setup().attended_pairs;
                rows.push_back(std::move(row));
                break;
            }
            case AblationAxis::Granularity: {
                cfg.granularity = parse_granularity(value);
                Engine engine(weights, task, cfg, base_pool());
                AblationRow row = summarize(evaluate(engine, tests), axis_str, value, "dbsa");
                row.token_sparsity = pool_sparsity(*engine.pool(), cfg.pattern);
                row.encode_pairs = engine.setup().attended_pairs;
                AblationRow standard = standard_row(weights, task, tests, *engine.pool(), row, value);
                standard.token_sparsity = 0.0;
                rows.push_back(std::move(row));
                rows.push_back(std::move(standard));
                break;
            }
            case AblationAxis::Grouping: {
                cfg.grouping = GroupingStrategy::parse(value, base.grouping.seed);
                cfg.grouping.swap_fraction = base.grouping.swap_fraction;
                Engine engine(weights, task, cfg);
                AblationRow row = summarize(evaluate(engine, tests), axis_str, value, "dbsa");
                row.token_sparsity = pool_sparsity(*engine.pool(), cfg.pattern);
                row.encode_pairs = engine.setup().attended_pairs;
                rows.push_back(std::move(row));
                break;
            }
            case AblationAxis::Ordering: {
                cfg.ordering = OrderingStrategy::parse(value);
                Engine engine(weights, task, cfg, base_pool());
                AblationRow row = summarize(evaluate(engine, tests), axis_str, value, "dbsa");
                row.token_sparsity = pool_sparsity(*engine.pool(), cfg.pattern);
                row.encode_pairs = engine.setup().attended_pairs;
                rows.push_back(std::move(row));
                break;
            }
        }
    }
    return rows;
}

}  // namespace dbsa
