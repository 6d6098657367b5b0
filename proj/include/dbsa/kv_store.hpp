#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "dbsa/digest.hpp"
#include "dbsa/model.hpp"

namespace dbsa {

// Token span of one demonstration inside its block.
struct ExampleSpan {
    std::uint32_t offset = 0;
    std::uint32_t length = 0;
    friend bool operator==(const ExampleSpan&, const ExampleSpan&) = default;
};

struct BlockRecord {
    std::uint32_t id = 0;
    std::uint32_t token_count = 0;
    std::uint64_t position_begin = 0;  // original positions [begin, begin + token_count)
    Digest text_digest{};
    std::vector<ExampleSpan> examples;
    friend bool operator==(const BlockRecord&, const BlockRecord&) = default;
};

// Append-only store of per-block pre-rotation KV segments.
class SegmentedKVCache {
public:
    SegmentedKVCache() = default;
    SegmentedKVCache(Digest config_hash, std::size_t n_layers, std::size_t n_kv_heads, std::size_t head_dim);
    static SegmentedKVCache for_config(const ModelConfig& config);

    // Requires block_id == n_blocks() and kv positions continuing the
    // original position sequence.
    void append_block(std::uint32_t block_id, PreRotationKV kv, Digest text_digest, std::vector<ExampleSpan> examples);

    void seal() { sealed_ = true; }
    bool sealed() const { return sealed_; }

    const Digest& config_hash() const { return config_hash_; }
    std::size_t n_layers() const { return n_layers_; }
    std::size_t n_kv_heads() const { return n_kv_heads_; }
    std::size_t head_dim() const { return head_dim_; }
    std::size_t n_blocks() const { return blocks_.size(); }
    std::size_t total_tokens() const;
    std::size_t n_examples() const { return example_index_.size(); }

    const BlockRecord& block(std::size_t id) const { return blocks_.at(id); }
    const std::vector<BlockRecord>& blocks() const { return blocks_; }
    const LayerKV& segment(std::size_t layer, std::size_t block) const { return segments_.at(block).at(layer); }

    // (block id, example index within block) for a global example id.
    std::pair<std::uint32_t, std::uint32_t> locate_example(std::size_t example) const { return example_index_.at(example); }

    // Blocks rotated at their original positions, concatenated ascending.
    RotatedKV rotated_blocks(std::span<const std::size_t> ids, float rope_theta) const;

    friend bool operator==(const SegmentedKVCache&, const SegmentedKVCache&) = default;

private:
    Digest config_hash_{};
    std::size_t n_layers_ = 0;
    std::size_t n_kv_heads_ = 0;
    std::size_t head_dim_ = 0;
    bool sealed_ = false;
    std::vector<BlockRecord> blocks_;
    std::vector<std::vector<LayerKV>> segments_;  // [block][layer]
    std::vector<std::pair<std::uint32_t, std::uint32_t>> example_index_;
};

enum class Granularity { Block, Example };

Granularity parse_granularity(std::string_view name);
const char* granularity_name(Granularity g);

// Ordered retrieval units. Unit 0 is the anchor: block 0 for block
// granularity, the first demonstration of block 0 for example granularity.
struct Selection {
    Granularity granularity = Granularity::Block;
    std::vector<std::uint32_t> units;
    std::vector<double> scores;  // parallel to units

    std::size_t size() const { return units.size(); }
};

struct Provenance {
    std::uint32_t block = 0;
    std::uint32_t offset = 0;
    friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct AssembledCache {
    RotatedKV kv;  // positions 0..T'-1
    std::vector<Provenance> provenance;
    std::size_t tokens() const { return kv.tokens(); }
};

// Concatenates the selected segments in selection order, assigns new
// positions 0..T'-1 and applies the rotary transform at those positions.
AssembledCache assemble(const SegmentedKVCache& cache, const Selection& selection, const ModelConfig& config);

void serialize(const SegmentedKVCache& cache, const std::filesystem::path& path);
SegmentedKVCache deserialize(const std::filesystem::path& path);
// Rejects caches produced under another model config.
SegmentedKVCache deserialize(const std::filesystem::path& path, const ModelConfig& expected);

// Bytes of the fixed header and of the block table for a cache file.
std::uint64_t cache_header_bytes();
std::uint64_t cache_table_bytes(const SegmentedKVCache& cache);

struct KVShape {
    std::uint64_t n_layers = 0;
    std::uint64_t n_kv_heads = 0;
    std::uint64_t head_dim = 0;
};

// 2 (K and V) x layers x kv_heads x head_dim x bytes_per_value x tokens.
std::uint64_t storage_bytes(KVShape shape, std::uint64_t n_tokens, std::uint64_t bytes_per_value);

}  // namespace dbsa
