#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "dbsa/kv_store.hpp"
#include "dbsa/model.hpp"
#include "dbsa/retrieval.hpp"
#include "dbsa/sparse_mask.hpp"

namespace dbsa {

struct Demonstration {
    std::string query;
    std::string answer;
};

// "Q: {query}\nA: {answer}\n\n" per demonstration; a test query renders as
// "Q: {query}\nA:" and a label continuation as " {label}".
struct PromptTemplate {
    std::string query_prefix = "Q: ";
    std::string answer_prefix = "\nA:";
    std::string separator = "\n\n";

    std::string render_demo(const Demonstration& d) const;
    std::string render_query(std::string_view query) const;
    std::string render_label(std::string_view label) const;
};

struct TaskSpec {
    std::vector<Demonstration> pool;
    std::vector<std::string> labels;
    PromptTemplate prompt;

    void validate() const;
};

// JSON-lines with "query" and "answer" fields; errors carry the line number.
std::vector<Demonstration> load_jsonl(const std::filesystem::path& path);
void save_jsonl(const std::vector<Demonstration>& demos, const std::filesystem::path& path);
// One label per non-empty line.
std::vector<std::string> load_labels(const std::filesystem::path& path);

enum class Method { DBSA, FixedICL, RetICL, ZeroShot };
Method parse_method(std::string_view name);
const char* method_name(Method m);

struct MethodConfig {
    Method method = Method::DBSA;
    AttentionPattern pattern = AttentionPattern::sink_prev_self(2);
    std::size_t block_size = 50;
    double ratio = 0.30;
    Granularity granularity = Granularity::Block;
    GroupingStrategy grouping{};
    OrderingStrategy ordering{};
    std::uint64_t seed = 0;
    std::size_t max_pool_tokens = 1 << 20;

    nlohmann::json to_json() const;
};

// One rendered block of demonstrations.
struct PoolBlock {
    std::vector<std::size_t> examples;  // pool indices
    std::string text;
    std::vector<std::int32_t> tokens;
    std::vector<ExampleSpan> spans;
};

std::vector<PoolBlock> render_blocks(const TaskSpec& task, const BlockPartition& partition);
// Text a retrieval unit is scored on.
std::string demo_retrieval_text(const Demonstration& d);

// Stage-1 encoder: each appended block is encoded in its own pass against
// the rotated KV of the earlier blocks its pattern row allows.
class PoolEncoder {
public:
    PoolEncoder(const ModelWeights& weights, AttentionPattern pattern);

    // Returns the attended (query, key) pairs of the pass.
    std::uint64_t append(std::span<const std::int32_t> tokens, Digest text_digest, std::vector<ExampleSpan> spans);
    // Same, for an already-rendered block.
    std::uint64_t append(const PoolBlock& block);

    const SegmentedKVCache& cache() const { return cache_; }
    SegmentedKVCache take() && { return std::move(cache_); }

private:
    const ModelWeights* weights_;
    AttentionPattern pattern_;
    SegmentedKVCache cache_;
};

// Encodes token blocks at positions from 0 under `pattern` and returns the
// whole context rotated in place (no cache reuse).
struct EncodedContext {
    RotatedKV kv;
    std::uint64_t attended_pairs = 0;
    std::uint64_t tokens = 0;
};
EncodedContext encode_context(const ModelWeights& weights, const std::vector<std::vector<std::int32_t>>& blocks,
                              AttentionPattern pattern);

struct SetupMetrics {
    double encode_seconds = 0.0;
    double index_seconds = 0.0;
    double seconds() const { return encode_seconds + index_seconds; }
    std::uint64_t attended_pairs = 0;
    std::uint64_t cache_bytes = 0;  // f32 bytes held by the segmented cache
};

struct EncodedPool {
    BlockPartition partition;
    std::vector<PoolBlock> blocks;
    SegmentedKVCache cache;
    Bm25Index index;
    // Pool index of each example unit (block order).
    std::vector<std::size_t> example_order;
    SetupMetrics setup;
};

// Partition, render, encode block by block and index the pool.
EncodedPool encode_pool(const ModelWeights& weights, const TaskSpec& task, const MethodConfig& config);

// Retrieval index for the given granularity over an already partitioned pool.
Bm25Index build_unit_index(const TaskSpec& task, const BlockPartition& partition, Granularity granularity);

struct QueryMetrics {
    double retrieval_seconds = 0.0;
    double assembly_seconds = 0.0;
    double scoring_seconds = 0.0;
    double total_seconds = 0.0;
    std::uint64_t context_tokens = 0;
    std::uint64_t attended_pairs = 0;
    std::uint64_t processed_tokens = 0;
    std::uint64_t attention_flops = 0;
    std::vector<std::uint32_t> selected_units;
};

struct Prediction {
    std::size_t label_index = 0;
    std::string label;
    std::vector<double> label_scores;
    QueryMetrics metrics;
};

// Picks the label with the highest summed log-probability; ties go to the
// lexicographically smallest label.
std::size_t best_label(const std::vector<double>& scores, const std::vector<std::string>& labels);

// A method ready to answer queries. Setup work (encoding, indexing) happens
// in the constructor; infer() is const and safe to call concurrently.
class Engine {
public:
    Engine(const ModelWeights& weights, const TaskSpec& task, MethodConfig config);
    // Reuses an existing encoded pool (DBSA and FixedICL only).
    Engine(const ModelWeights& weights, const TaskSpec& task, MethodConfig config,
           std::shared_ptr<const EncodedPool> pool);

    Prediction infer(std::string_view query) const;
    // The context a query would be scored against.
    RotatedKV context_for(std::string_view query, QueryMetrics* metrics = nullptr) const;

    const MethodConfig& config() const { return config_; }
    const SetupMetrics& setup() const { return setup_; }
    const std::shared_ptr<const EncodedPool>& pool() const { return pool_; }

private:
    const ModelWeights* weights_;
    const TaskSpec* task_;
    MethodConfig config_;
    SetupMetrics setup_;
    std::shared_ptr<const EncodedPool> pool_;
    std::shared_ptr<const AssembledCache> fixed_;   // FixedICL
    std::shared_ptr<const Bm25Index> example_index_;  // RetICL
    std::vector<std::vector<std::int32_t>> label_tokens_;

    void prepare();
};

struct Evaluation {
    std::vector<Prediction> predictions;
    double accuracy = 0.0;
};

// Runs every test query, fanning out over worker threads; per-query timing
// is taken on the worker.
Evaluation evaluate(const Engine& engine, const std::vector<Demonstration>& tests);

enum class AblationAxis { Pattern, Granularity, Grouping, Ordering };
AblationAxis parse_axis(std::string_view name);
const char* axis_name(AblationAxis axis);
// Every value the axis supports.
std::vector<std::string> full_grid(AblationAxis axis);

struct AblationRow {
    std::string axis;
    std::string value;
    std::string variant;  // "dbsa", "full-cache" or "standard"
    double accuracy = 0.0;
    double mean_attended_pairs = 0.0;
    double mean_attention_flops = 0.0;
    double mean_context_tokens = 0.0;
    double token_sparsity = 0.0;
    std::uint64_t encode_pairs = 0;
    std::vector<std::string> predictions;
    std::vector<std::vector<std::uint32_t>> selections;
};

std::vector<AblationRow> run_ablation(const ModelWeights& weights, const TaskSpec& task,
                                      const std::vector<Demonstration>& tests, AblationAxis axis,
                                      const std::vector<std::string>& grid, const MethodConfig& base);

}  // namespace dbsa
