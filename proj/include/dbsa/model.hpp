#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dbsa/digest.hpp"
#include "dbsa/tensor.hpp"

namespace dbsa {

struct ModelConfig {
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int n_kv_heads = 2;
    int head_dim = 16;
    int ffn_dim = 128;
    int vocab_size = 259;
    float rope_theta = 10000.0f;
    float norm_eps = 1e-5f;
    int max_seq_len = 32768;
    bool tie_embeddings = false;

    void validate() const;
    int group_size() const { return n_heads / n_kv_heads; }
    std::size_t q_width() const { return static_cast<std::size_t>(n_heads) * head_dim; }
    std::size_t kv_width() const { return static_cast<std::size_t>(n_kv_heads) * head_dim; }

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
    // SHA-256 of the canonical JSON form; identifies cache compatibility.
    Digest hash() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Llama-3.1-8B attention shape, used by the storage calculator.
ModelConfig llama31_8b_shape();

class ModelWeights {
public:
    ModelWeights() = default;
    ModelWeights(ModelConfig config, std::map<std::string, Tensor> tensors);

    const ModelConfig& config() const { return config_; }
    const Digest& config_hash() const { return config_hash_; }
    const Tensor& get(const std::string& name) const;
    const Tensor& layer(int l, const char* component) const;
    bool has(const std::string& name) const { return tensors_.count(name) != 0; }
    const std::map<std::string, Tensor>& tensors() const { return tensors_; }
    std::map<std::string, Tensor>& mutable_tensors() { return tensors_; }

    // SHA-256 over the tensor section (names, dims and data in name order).
    Digest checksum() const;

    static std::string layer_name(int l, const char* component);

private:
    ModelConfig config_;
    Digest config_hash_{};
    std::map<std::string, Tensor> tensors_;
};

// Expected dims of every tensor for a config; missing/extra names are errors on load.
std::map<std::string, std::vector<std::size_t>> expected_tensor_dims(const ModelConfig& config);

ModelWeights init_random(const ModelConfig& config, std::uint64_t seed);

void save_weights(const ModelWeights& weights, const std::filesystem::path& path);
ModelWeights load_weights(const std::filesystem::path& path);

struct TokenSequence {
    std::vector<std::int32_t> ids;
    std::vector<std::int64_t> positions;

    std::size_t size() const { return ids.size(); }
    static TokenSequence sequential(std::vector<std::int32_t> ids, std::int64_t start = 0);
    void validate(const ModelConfig& config) const;
};

// Per-layer key/value rows, each [tokens x n_kv_heads x head_dim].
struct LayerKV {
    Tensor keys;
    Tensor values;
    friend bool operator==(const LayerKV&, const LayerKV&) = default;
};

// Keys as projected, before the rotary transform. Values never rotate.
struct PreRotationKV {
    Digest config_hash{};
    std::vector<LayerKV> layers;
    std::vector<std::int64_t> positions;
    std::size_t tokens() const { return positions.size(); }
};

// Keys rotated at `positions`; ready to be attended.
struct RotatedKV {
    Digest config_hash{};
    std::vector<LayerKV> layers;
    std::vector<std::int64_t> positions;
    std::size_t tokens() const { return positions.size(); }
};

RotatedKV empty_context(const ModelConfig& config);

// Rotates each consecutive pair (x_i, x_{i+d/2}) of `vec` by angle
// position / theta^(2i/d).
void rope_rotate_inplace(std::span<float> vec, std::int64_t position, float theta);
Tensor rope_rotate(const Tensor& vec, std::int64_t position, float theta);

// Rotates every key row of `kv` at the matching position.
RotatedKV rotate(const PreRotationKV& kv, float theta);
RotatedKV rotate_at(const PreRotationKV& kv, std::span<const std::int64_t> positions, float theta);

// Concatenates rotated contexts in the order given.
RotatedKV concat(std::span<const RotatedKV> parts);

struct EncodeResult {
    PreRotationKV kv;
    Tensor hidden;  // final residual stream, [tokens x d_model]
    std::uint64_t attended_pairs = 0;
};

// One masked forward pass. `mask` has one row per new token and one column
// per context token followed by one per new token.
EncodeResult forward_encode(const ModelWeights& weights, const TokenSequence& tokens, const RotatedKV& context,
                            const Mask2D& mask);

// Final norm + LM head.
Tensor logits_from_hidden(const ModelWeights& weights, const Tensor& hidden);

struct QueryResult {
    Tensor logits;  // [query tokens x vocab]
    std::uint64_t attended_pairs = 0;
};

// Query tokens attend to every context position and causally to each other.
QueryResult forward_query(const ModelWeights& weights, const RotatedKV& context, const TokenSequence& query);

// Sum of log-softmax over a teacher-forced label continuation. `row0` is the
// logits row that predicts label[0].
double label_log_prob(const Tensor& logits, std::size_t row0, std::span<const std::int32_t> label);

struct LabelScore {
    double log_prob = 0.0;
    std::uint64_t attended_pairs = 0;
    std::uint64_t tokens = 0;
};

LabelScore score_label(const ModelWeights& weights, const RotatedKV& context, std::span<const std::int32_t> query_ids,
                       std::span<const std::int32_t> label_ids);

}  // namespace dbsa
