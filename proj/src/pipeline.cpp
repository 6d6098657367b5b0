#include "dbsa/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <exception>
#include <numeric>
#include <set>

#include "dbsa/error.hpp"
#include "dbsa/metrics.hpp"
#include "dbsa/tokenizer.hpp"

namespace dbsa {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

std::string PromptTemplate::render_demo(const Demonstration& d) const {
    return query_prefix + d.query + answer_prefix + " " + d.answer + separator;
}

std::string PromptTemplate::render_query(std::string_view query) const {
    return query_prefix + std::string(query) + answer_prefix;
}

std::string PromptTemplate::render_label(std::string_view label) const { return " " + std::string(label); }

void TaskSpec::validate() const {
    if (labels.empty()) throw ValidationError("label set is empty");
    const std::set<std::string> unique(labels.begin(), labels.end());
    if (unique.size() != labels.size()) throw ValidationError("labels must be distinct");
    for (std::size_t i = 0; i < pool.size(); ++i)
        if (!unique.count(pool[i].answer))
            throw ValidationError("pool example " + std::to_string(i) + " has answer '" + pool[i].answer +
                                  "' outside the label set");
}

Method parse_method(std::string_view name) {
    if (name == "dbsa") return Method::DBSA;
    if (name == "fixed") return Method::FixedICL;
    if (name == "reticl") return Method::RetICL;
    if (name == "zeroshot") return Method::ZeroShot;
    throw ValidationError("unknown method '" + std::string(name) + "'");
}

const char* method_name(Method m) {
    switch (m) {
        case Method::DBSA: return "dbsa";
        case Method::FixedICL: return "fixed";
        case Method::RetICL: return "reticl";
        case Method::ZeroShot: return "zeroshot";
    }
    return "unknown";
}

nlohmann::json MethodConfig::to_json() const {
    return {{"method", method_name(method)},
            {"pattern", pattern.name()},
            {"local_blocks", pattern.local_blocks},
            {"block_size", block_size},
            {"ratio", ratio},
            {"granularity", granularity_name(granularity)},
            {"grouping", grouping.name()},
            {"swap_fraction", grouping.swap_fraction},
            {"ordering", ordering.name()},
            {"seed", seed}};
}

std::string demo_retrieval_text(const Demonstration& d) { return d.query + " " + d.answer; }

std::vector<PoolBlock> render_blocks(const TaskSpec& task, const BlockPartition& partition) {
    std::vector<PoolBlock> blocks;
    for (const auto& ids : partition) {
        PoolBlock b;
        b.examples = ids;
        for (auto i : ids) {
            const std::string demo = task.prompt.render_demo(task.pool.at(i));
            b.spans.push_back({static_cast<std::uint32_t>(b.text.size()), static_cast<std::uint32_t>(demo.size())});
            b.text += demo;
        }
        b.tokens = encode_bytes(b.text);
        blocks.push_back(std::move(b));
    }
    return blocks;
}

PoolEncoder::PoolEncoder(const ModelWeights& weights, AttentionPattern pattern)
    : weights_(&weights), pattern_(pattern), cache_(SegmentedKVCache::for_config(weights.config())) {}

std::uint64_t PoolEncoder::append(std::span<const std::int32_t> tokens, Digest text_digest,
                                  std::vector<ExampleSpan> spans) {
    const auto& config = weights_->config();
    const std::size_t b = cache_.n_blocks();
    // Row b of the pattern does not depend on how many blocks follow.
    const auto context_ids = build_block_mask(b + 1, pattern_).context_blocks(b);
    RotatedKV context = cache_.rotated_blocks(context_ids, config.rope_theta);

    const std::size_t s = context.tokens();
    const std::size_t t = tokens.size();
    Mask2D mask(t, s + t);
    for (std::size_t r = 0; r < t; ++r)
        for (std::size_t c = 0; c <= s + r; ++c) mask.set(r, c, true);

    const auto start = static_cast<std::int64_t>(cache_.total_tokens());
    if (start + static_cast<std::int64_t>(t) > config.max_seq_len)
        throw ValidationError("pool exceeds the model's max_seq_len positions");
    EncodeResult enc =
        forward_encode(*weights_, TokenSequence::sequential({tokens.begin(), tokens.end()}, start), context, mask);
    cache_.append_block(static_cast<std::uint32_t>(b), std::move(enc.kv), text_digest, std::move(spans));
    return enc.attended_pairs;
}

std::uint64_t PoolEncoder::append(const PoolBlock& block) {
    return append(block.tokens, sha256(block.text), block.spans);
}

EncodedContext encode_context(const ModelWeights& weights, const std::vector<std::vector<std::int32_t>>& blocks,
                              AttentionPattern pattern) {
    EncodedContext out;
    PoolEncoder enc(weights, pattern);
    for (const auto& b : blocks) {
        if (b.empty()) continue;
        out.attended_pairs += enc.append(b, Digest{}, {});
        out.tokens += b.size();
    }
    std::vector<std::size_t> all(enc.cache().n_blocks());
    std::iota(all.begin(), all.end(), 0);
    out.kv = enc.cache().rotated_blocks(all, weights.config().rope_theta);
    return out;
}

Bm25Index build_unit_index(const TaskSpec& task, const BlockPartition& partition, Granularity granularity) {
    std::vector<std::string> docs;
    for (const auto& ids : partition) {
        if (granularity == Granularity::Block) {
            std::string text;
            for (auto i : ids) {
                if (!text.empty()) text += ' ';
                text += demo_retrieval_text(task.pool.at(i));
            }
            docs.push_back(std::move(text));
        } else {
            for (auto i : ids) docs.push_back(demo_retrieval_text(task.pool.at(i)));
        }
    }
    return Bm25Index(docs, granularity);
}

EncodedPool encode_pool(const ModelWeights& weights, const TaskSpec& task, const MethodConfig& config) {
    task.validate();
    if (task.pool.empty()) throw ValidationError("demonstration pool is empty");
    EncodedPool out;
    auto t0 = Clock::now();
    out.partition = group([&] {
        std::vector<std::string> texts;
        for (const auto& d : task.pool) texts.push_back(demo_retrieval_text(d));
        return texts;
    }(), config.block_size, config.grouping);
    out.blocks = render_blocks(task, out.partition);
    std::size_t total = 0;
    for (const auto& b : out.blocks) total += b.tokens.size();
    if (total > config.max_pool_tokens) throw ValidationError("pool exceeds the configured token limit");
    if (total > static_cast<std::size_t>(weights.config().max_seq_len))
        throw ValidationError("pool of " + std::to_string(total) + " tokens exceeds max_seq_len");

    PoolEncoder encoder(weights, config.pattern);
    for (const auto& b : out.blocks) out.setup.attended_pairs += encoder.append(b);
    out.cache = std::move(encoder).take();
    out.cache.seal();
    out.setup.encode_seconds = seconds_since(t0);
    out.setup.cache_bytes = storage_bytes({out.cache.n_layers(), out.cache.n_kv_heads(), out.cache.head_dim()},
                                          out.cache.total_tokens(), 4);

    t0 = Clock::now();
    out.index = build_unit_index(task, out.partition, config.granularity);
    out.setup.index_seconds = seconds_since(t0);
    for (const auto& ids : out.partition) out.example_order.insert(out.example_order.end(), ids.begin(), ids.end());
    return out;
}

std::size_t best_label(const std::vector<double>& scores, const std::vector<std::string>& labels) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[best] || (scores[i] == scores[best] && labels[i] < labels[best])) best = i;
    return best;
}

Engine::Engine(const ModelWeights& weights, const TaskSpec& task, MethodConfig config)
    : weights_(&weights), task_(&task), config_(config) {
    task.validate();
    if (config_.method == Method::DBSA || config_.method == Method::FixedICL) {
        auto pool = std::make_shared<EncodedPool>(encode_pool(weights, task, config_));
        setup_ = pool->setup;
        if (config_.method == Method::FixedICL) setup_.index_seconds = 0.0;
        pool_ = std::move(pool);
    } else if (config_.method == Method::RetICL) {
        const auto t0 = Clock::now();
        std::vector<std::string> docs;
        for (const auto& d : task.pool) docs.push_back(demo_retrieval_text(d));
        example_index_ = std::make_shared<Bm25Index>(docs, Granularity::Example);
        setup_.index_seconds = seconds_since(t0);
    }
    prepare();
}

Engine::Engine(const ModelWeights& weights, const TaskSpec& task, MethodConfig config,
               std::shared_ptr<const EncodedPool> pool)
    : weights_(&weights), task_(&task), config_(config), pool_(std::move(pool)) {
    task.validate();
    if (config_.method != Method::DBSA && config_.method != Method::FixedICL)
        throw ValidationError("only dbsa and fixed reuse an encoded pool");
    if (!pool_) throw ValidationError("null encoded pool");
    if (pool_->cache.config_hash() != weights.config_hash())
        throw CompatibilityError("encoded pool was built for a different model config");
    setup_ = pool_->setup;
    if (config_.method == Method::DBSA && pool_->index.granularity() != config_.granularity) {
        auto rebuilt = std::make_shared<EncodedPool>(*pool_);
        const auto t0 = Clock::now();
        rebuilt->index = build_unit_index(task, rebuilt->partition, config_.granularity);
        rebuilt->setup.index_seconds = seconds_since(t0);
        setup_.index_seconds = rebuilt->setup.index_seconds;
        pool_ = std::move(rebuilt);
    }
    prepare();
}

void Engine::prepare() {
    for (const auto& l : task_->labels) label_tokens_.push_back(encode_bytes(task_->prompt.render_label(l)));
    if (config_.method == Method::FixedICL) {
        const auto t0 = Clock::now();
        Selection all;
        all.granularity = Granularity::Block;
        all.units.resize(pool_->cache.n_blocks());
        std::iota(all.units.begin(), all.units.end(), 0u);
        all.scores.assign(all.units.size(), 0.0);
        fixed_ = std::make_shared<AssembledCache>(assemble(pool_->cache, all, weights_->config()));
        setup_.encode_seconds += seconds_since(t0);
    }
}

RotatedKV Engine::context_for(std::string_view query, QueryMetrics* metrics) const {
    QueryMetrics local;
    QueryMetrics& m = metrics ? *metrics : local;
    const auto& config = weights_->config();
    switch (config_.method) {
        case Method::ZeroShot:
            return empty_context(config);
        case Method::FixedICL:
            return fixed_->kv;
        case Method::DBSA: {
            auto t0 = Clock::now();
            Selection sel = order(select(pool_->index, query, config_.ratio), config_.ordering);
            m.retrieval_seconds = seconds_since(t0);
            m.selected_units = sel.units;
            t0 = Clock::now();
            AssembledCache assembled = assemble(pool_->cache, sel, config);
            m.assembly_seconds = seconds_since(t0);
            return std::move(assembled.kv);
        }
        case Method::RetICL: {
            auto t0 = Clock::now();
            const auto ids = top_units(*example_index_, query, config_.ratio);
            m.retrieval_seconds = seconds_since(t0);
            m.selected_units = ids;
            t0 = Clock::now();
            std::string text;
            for (auto id : ids) text += task_->prompt.render_demo(task_->pool[id]);
            EncodedContext ctx = encode_context(*weights_, {encode_bytes(text)}, AttentionPattern::full());
            m.assembly_seconds = seconds_since(t0);
            m.attended_pairs += ctx.attended_pairs;
            m.processed_tokens += ctx.tokens;
            return std::move(ctx.kv);
        }
    }
    throw Error("unreachable");
}

Prediction Engine::infer(std::string_view query) const {
    const auto t_start = Clock::now();
    Prediction p;
    QueryMetrics& m = p.metrics;
    // FixedICL scores against the shared precomputed cache without copying it.
    RotatedKV owned;
    const RotatedKV* context = &owned;
    if (config_.method == Method::FixedICL) {
        context = &fixed_->kv;
    } else {
        owned = context_for(query, &m);
    }
    m.context_tokens = context->tokens();

    const auto t0 = Clock::now();
    const auto query_ids = encode_bytes(task_->prompt.render_query(query));
    p.label_scores.reserve(label_tokens_.size());
    for (const auto& label : label_tokens_) {
        const LabelScore s = score_label(*weights_, *context, query_ids, label);
        p.label_scores.push_back(s.log_prob);
        m.attended_pairs += s.attended_pairs;
        m.processed_tokens += s.tokens;
    }
    m.scoring_seconds = seconds_since(t0);
    p.label_index = best_label(p.label_scores, task_->labels);
    p.label = task_->labels[p.label_index];
    m.attention_flops = flops_attention(m.attended_pairs, m.processed_tokens, weights_->config()).attention;
    m.total_seconds = seconds_since(t_start);
    return p;
}

Evaluation evaluate(const Engine& engine, const std::vector<Demonstration>& tests) {
    Evaluation ev;
    ev.predictions.resize(tests.size());
    std::exception_ptr error;
    const auto n = static_cast<std::ptrdiff_t>(tests.size());
#pragma omp parallel for schedule(dynamic) num_threads(max_threads())
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        try {
            ev.predictions[static_cast<std::size_t>(i)] = engine.infer(tests[static_cast<std::size_t>(i)].query);
        } catch (...) {
#pragma omp critical
            if (!error) error = std::current_exception();
        }
    }
    if (error) std::rethrow_exception(error);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < tests.size(); ++i)
        if (ev.predictions[i].label == tests[i].answer) ++correct;
    ev.accuracy = tests.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(tests.size());
    return ev;
}

}  // namespace dbsa
