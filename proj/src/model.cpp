#include "dbsa/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dbsa/attention.hpp"
#include "dbsa/error.hpp"
#include "dbsa/rng.hpp"

namespace dbsa {

void ModelConfig::validate() const {
    if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || n_kv_heads <= 0 || head_dim <= 0 || ffn_dim <= 0 ||
        vocab_size <= 0 || max_seq_len <= 0)
        throw ConfigError("model config fields must be positive");
    if (!(rope_theta > 0.0f) || !(norm_eps > 0.0f)) throw ConfigError("rope_theta and norm_eps must be positive");
    if (n_heads % n_kv_heads != 0) throw ConfigError("n_heads must be a multiple of n_kv_heads");
    if (d_model != n_heads * head_dim) throw ConfigError("d_model must equal n_heads * head_dim");
    if (head_dim % 2 != 0) throw ConfigError("head_dim must be even for rotary embeddings");
}

nlohmann::json ModelConfig::to_json() const {
    return {{"d_model", d_model},       {"n_layers", n_layers},     {"n_heads", n_heads},
            {"n_kv_heads", n_kv_heads}, {"head_dim", head_dim},     {"ffn_dim", ffn_dim},
            {"vocab_size", vocab_size}, {"rope_theta", rope_theta}, {"norm_eps", norm_eps},
            {"max_seq_len", max_seq_len}, {"tie_embeddings", tie_embeddings}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        c.d_model = j.at("d_model").get<int>();
        c.n_layers = j.at("n_layers").get<int>();
        c.n_heads = j.at("n_heads").get<int>();
        c.n_kv_heads = j.at("n_kv_heads").get<int>();
        c.head_dim = j.at("head_dim").get<int>();
        c.ffn_dim = j.at("ffn_dim").get<int>();
        c.vocab_size = j.at("vocab_size").get<int>();
        c.rope_theta = j.value("rope_theta", 10000.0f);
        c.norm_eps = j.value("norm_eps", 1e-5f);
        c.max_seq_len = j.at("max_seq_len").get<int>();
        c.tie_embeddings = j.value("tie_embeddings", false);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    return c;
}

Digest ModelConfig::hash() const { return sha256(to_json().dump()); }

ModelConfig llama31_8b_shape() {
    ModelConfig c;
    c.d_model = 4096;
    c.n_layers = 32;
    c.n_heads = 32;
    c.n_kv_heads = 8;
    c.head_dim = 128;
    c.ffn_dim = 14336;
    c.vocab_size = 128256;
    c.rope_theta = 500000.0f;
    c.max_seq_len = 131072;
    return c;
}

std::string ModelWeights::layer_name(int l, const char* component) {
    return "layers." + std::to_string(l) + "." + component;
}

std::map<std::string, std::vector<std::size_t>> expected_tensor_dims(const ModelConfig& c) {
    const auto d = static_cast<std::size_t>(c.d_model);
    const auto f = static_cast<std::size_t>(c.ffn_dim);
    const auto v = static_cast<std::size_t>(c.vocab_size);
    std::map<std::string, std::vector<std::size_t>> dims;
    dims["tok_embeddings"] = {v, d};
    dims["final_norm"] = {d};
    if (!c.tie_embeddings) dims["lm_head"] = {d, v};
    for (int l = 0; l < c.n_layers; ++l) {
        dims[ModelWeights::layer_name(l, "attn_norm")] = {d};
        dims[ModelWeights::layer_name(l, "wq")] = {d, c.q_width()};
        dims[ModelWeights::layer_name(l, "wk")] = {d, c.kv_width()};
        dims[ModelWeights::layer_name(l, "wv")] = {d, c.kv_width()};
        dims[ModelWeights::layer_name(l, "wo")] = {c.q_width(), d};
        dims[ModelWeights::layer_name(l, "ffn_norm")] = {d};
        dims[ModelWeights::layer_name(l, "w_gate")] = {d, f};
        dims[ModelWeights::layer_name(l, "w_up")] = {d, f};
        dims[ModelWeights::layer_name(l, "w_down")] = {f, d};
    }
    return dims;
}

ModelWeights::ModelWeights(ModelConfig config, std::map<std::string, Tensor> tensors)
    : config_(config), config_hash_(config.hash()), tensors_(std::move(tensors)) {
    config_.validate();
    const auto expected = expected_tensor_dims(config_);
    if (expected.size() != tensors_.size()) throw ShapeError("weights: tensor count does not match config");
    for (const auto& [name, dims] : expected) {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw ShapeError("weights: missing tensor " + name);
        if (it->second.dims() != dims) throw ShapeError("weights: tensor " + name + " has wrong dims");
    }
}

const Tensor& ModelWeights::get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ShapeError("weights: no tensor named " + name);
    return it->second;
}

const Tensor& ModelWeights::layer(int l, const char* component) const { return get(layer_name(l, component)); }

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace

ModelWeights init_random(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    const Rng root(seed);
    std::map<std::string, Tensor> tensors;
    for (const auto& [name, dims] : expected_tensor_dims(config)) {
        Tensor t(dims);
        if (dims.size() == 1) {
            std::fill(t.data().begin(), t.data().end(), 1.0f);
        } else {
            Rng rng = root.split(fnv1a(name));
            const float bound = name == "tok_embeddings" ? 1.0f : 1.0f / std::sqrt(static_cast<float>(dims[0]));
            for (float& x : t.data()) x = rng.uniform(-bound, bound);
        }
        tensors.emplace(name, std::move(t));
    }
    return ModelWeights(config, std::move(tensors));
}

TokenSequence TokenSequence::sequential(std::vector<std::int32_t> ids, std::int64_t start) {
    TokenSequence s;
    s.positions.resize(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) s.positions[i] = start + static_cast<std::int64_t>(i);
    s.ids = std::move(ids);
    return s;
}

void TokenSequence::validate(const ModelConfig& config) const {
    if (ids.size() != positions.size()) throw ShapeError("token ids and positions differ in length");
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= config.vocab_size)
            throw ValidationError("token id " + std::to_string(ids[i]) + " outside vocabulary");
        if (positions[i] < 0 || positions[i] >= config.max_seq_len)
            throw ValidationError("position " + std::to_string(positions[i]) + " outside [0, max_seq_len)");
        if (i > 0 && positions[i] <= positions[i - 1]) throw ValidationError("positions must be strictly increasing");
    }
}

RotatedKV empty_context(const ModelConfig& config) {
    RotatedKV kv;
    kv.config_hash = config.hash();
    kv.layers.resize(static_cast<std::size_t>(config.n_layers));
    return kv;
}

void rope_rotate_inplace(std::span<float> vec, std::int64_t position, float theta) {
    const std::size_t d = vec.size();
    if (d % 2 != 0) throw ConfigError("rope: head_dim must be even");
    const std::size_t half = d / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::pow(static_cast<double>(theta), -2.0 * static_cast<double>(i) / static_cast<double>(d));
        const double angle = static_cast<double>(position) * freq;
        const float c = static_cast<float>(std::cos(angle));
        const float s = static_cast<float>(std::sin(angle));
        const float x = vec[i];
        const float y = vec[i + half];
        vec[i] = x * c - y * s;
        vec[i + half] = x * s + y * c;
    }
}

Tensor rope_rotate(const Tensor& vec, std::int64_t position, float theta) {
    Tensor out = vec;
    rope_rotate_inplace(out.data(), position, theta);
    return out;
}

namespace {

// Rotates each head_dim chunk of a [tokens x heads*head_dim] tensor.
void rotate_rows(Tensor& t, std::span<const std::int64_t> positions, std::size_t head_dim, float theta) {
    const std::size_t heads = t.row_size() / head_dim;
    for (std::size_t r = 0; r < t.dim(0); ++r) {
        auto row = t.row(r);
        for (std::size_t h = 0; h < heads; ++h) rope_rotate_inplace(row.subspan(h * head_dim, head_dim), positions[r], theta);
    }
}

}  // namespace

RotatedKV rotate_at(const PreRotationKV& kv, std::span<const std::int64_t> positions, float theta) {
    if (positions.size() != kv.tokens()) throw ShapeError("rotate: position count mismatch");
    RotatedKV out;
    out.config_hash = kv.config_hash;
    out.positions.assign(positions.begin(), positions.end());
    out.layers = kv.layers;
    for (auto& layer : out.layers) {
        if (layer.keys.empty()) continue;
        const std::size_t head_dim = layer.keys.dim(2);
        Tensor flat = layer.keys.reshaped({layer.keys.dim(0), layer.keys.dim(1) * head_dim});
        rotate_rows(flat, positions, head_dim, theta);
        layer.keys = flat.reshaped(layer.keys.dims());
    }
    return out;
}

RotatedKV rotate(const PreRotationKV& kv, float theta) { return rotate_at(kv, kv.positions, theta); }

namespace {

// Stacks [n_i x a x b] tensors along the leading axis.
Tensor stack_rows(const std::vector<const Tensor*>& parts) {
    std::size_t rows = 0;
    std::vector<std::size_t> tail;
    for (const Tensor* p : parts) {
        if (p->empty()) continue;
        std::vector<std::size_t> t(p->dims().begin() + 1, p->dims().end());
        if (!tail.empty() && t != tail) throw ShapeError("concat: segment shapes differ");
        tail = t;
        rows += p->dim(0);
    }
    if (rows == 0) return {};
    std::vector<std::size_t> dims{rows};
    dims.insert(dims.end(), tail.begin(), tail.end());
    std::vector<float> data;
    data.reserve(rows * (dims.size() > 1 ? Tensor(dims).row_size() : 1));
    for (const Tensor* p : parts) data.insert(data.end(), p->data().begin(), p->data().end());
    return Tensor(std::move(dims), std::move(data));
}

}  // namespace

RotatedKV concat(std::span<const RotatedKV> parts) {
    RotatedKV out;
    if (parts.empty()) return out;
    out.config_hash = parts.front().config_hash;
    const std::size_t layers = parts.front().layers.size();
    out.layers.resize(layers);
    for (const auto& p : parts) {
        if (p.config_hash != out.config_hash) throw CompatibilityError("concat: config hash mismatch");
        if (p.layers.size() != layers) throw ShapeError("concat: layer count mismatch");
        out.positions.insert(out.positions.end(), p.positions.begin(), p.positions.end());
    }
    for (std::size_t l = 0; l < layers; ++l) {
        std::vector<const Tensor*> keys, values;
        for (const auto& p : parts) {
            keys.push_back(&p.layers[l].keys);
            values.push_back(&p.layers[l].values);
        }
        out.layers[l].keys = stack_rows(keys);
        out.layers[l].values = stack_rows(values);
    }
    return out;
}

namespace {

Tensor embed(const ModelWeights& w, const std::vector<std::int32_t>& ids) {
    const Tensor& table = w.get("tok_embeddings");
    const std::size_t d = table.dim(1);
    Tensor x({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto src = table.row(static_cast<std::size_t>(ids[i]));
        std::copy(src.begin(), src.end(), x.row(i).begin());
    }
    return x;
}

// Context rows (flattened to [S x kv_width]) followed by the new rows.
Tensor join_rows(const Tensor& context, const Tensor& fresh, std::size_t width) {
    const std::size_t s = context.empty() ? 0 : context.dim(0);
    Tensor out({s + fresh.dim(0), width});
    auto dst = out.data();
    if (s) std::copy(context.data().begin(), context.data().end(), dst.begin());
    std::copy(fresh.data().begin(), fresh.data().end(), dst.begin() + static_cast<std::ptrdiff_t>(s * width));
    return out;
}

void check_context(const ModelWeights& w, const RotatedKV& context, const TokenSequence& tokens) {
    const auto& c = w.config();
    if (context.config_hash != w.config_hash())
        throw CompatibilityError("context KV was produced under a different model config");
    if (context.layers.size() != static_cast<std::size_t>(c.n_layers)) throw ShapeError("context KV layer count mismatch");
    for (const auto& layer : context.layers) {
        const std::size_t rows = layer.keys.empty() ? 0 : layer.keys.dim(0);
        if (rows != context.tokens()) throw ShapeError("context KV rows do not match its positions");
        if (rows && (layer.keys.rank() != 3 || layer.keys.dim(1) != static_cast<std::size_t>(c.n_kv_heads) ||
                     layer.keys.dim(2) != static_cast<std::size_t>(c.head_dim) || layer.values.dims() != layer.keys.dims()))
            throw ShapeError("context KV segment has wrong dims");
    }
    if (!tokens.positions.empty())
        for (auto p : context.positions)
            if (p >= tokens.positions.front())
                throw ValidationError("context position " + std::to_string(p) + " overlaps the new tokens");
}

}  // namespace

EncodeResult forward_encode(const ModelWeights& w, const TokenSequence& tokens, const RotatedKV& context,
                            const Mask2D& mask) {
    const auto& c = w.config();
    tokens.validate(c);
    check_context(w, context, tokens);
    const std::size_t t = tokens.size();
    const std::size_t s = context.tokens();
    if (t == 0) throw ValidationError("forward pass needs at least one token");
    if (mask.rows() != t || mask.cols() != s + t) throw ShapeError("mask must be [tokens x (context + tokens)]");

    const AttentionShape shape{static_cast<std::size_t>(c.n_heads), static_cast<std::size_t>(c.n_kv_heads),
                               static_cast<std::size_t>(c.head_dim)};
    EncodeResult result;
    result.kv.config_hash = w.config_hash();
    result.kv.positions = tokens.positions;
    result.kv.layers.resize(static_cast<std::size_t>(c.n_layers));
    result.attended_pairs = mask.count();

    Tensor x = embed(w, tokens.ids);
    for (int l = 0; l < c.n_layers; ++l) {
        Tensor h = rms_norm(x, w.layer(l, "attn_norm").data(), c.norm_eps);
        Tensor q = matmul(h, w.layer(l, "wq"));
        Tensor k = matmul(h, w.layer(l, "wk"));
        Tensor v = matmul(h, w.layer(l, "wv"));
        auto& out_layer = result.kv.layers[static_cast<std::size_t>(l)];
        out_layer.keys = k.reshaped({t, shape.n_kv_heads, shape.head_dim});
        out_layer.values = v.reshaped({t, shape.n_kv_heads, shape.head_dim});

        rotate_rows(q, tokens.positions, shape.head_dim, c.rope_theta);
        rotate_rows(k, tokens.positions, shape.head_dim, c.rope_theta);

        const auto& ctx = context.layers[static_cast<std::size_t>(l)];
        const Tensor keys = join_rows(ctx.keys, k, c.kv_width());
        const Tensor values = join_rows(ctx.values, v, c.kv_width());
        Tensor attn = attention(q, keys, values, mask, shape);
        add_inplace(x, matmul(attn, w.layer(l, "wo")));

        Tensor h2 = rms_norm(x, w.layer(l, "ffn_norm").data(), c.norm_eps);
        Tensor act = swiglu(matmul(h2, w.layer(l, "w_gate")), matmul(h2, w.layer(l, "w_up")));
        add_inplace(x, matmul(act, w.layer(l, "w_down")));
    }
    result.hidden = std::move(x);
    return result;
}

Tensor logits_from_hidden(const ModelWeights& w, const Tensor& hidden) {
    const auto& c = w.config();
    Tensor h = rms_norm(hidden, w.get("final_norm").data(), c.norm_eps);
    return c.tie_embeddings ? matmul_bt(h, w.get("tok_embeddings")) : matmul(h, w.get("lm_head"));
}

QueryResult forward_query(const ModelWeights& w, const RotatedKV& context, const TokenSequence& query) {
    const std::size_t s = context.tokens();
    const std::size_t t = query.size();
    Mask2D mask(t, s + t);
    for (std::size_t r = 0; r < t; ++r)
        for (std::size_t col = 0; col <= s + r; ++col) mask.set(r, col, true);
    EncodeResult enc = forward_encode(w, query, context, mask);
    return {logits_from_hidden(w, enc.hidden), enc.attended_pairs};
}

double label_log_prob(const Tensor& logits, std::size_t row0, std::span<const std::int32_t> label) {
    if (label.empty()) throw ValidationError("label must have at least one token");
    if (logits.rank() != 2 || row0 + label.size() > logits.dim(0)) throw ShapeError("label extends past logits");
    double total = 0.0;
    for (std::size_t i = 0; i < label.size(); ++i) {
        auto row = logits.row(row0 + i);
        if (label[i] < 0 || static_cast<std::size_t>(label[i]) >= row.size())
            throw ValidationError("label token outside vocabulary");
        double mx = -std::numeric_limits<double>::infinity();
        for (float v : row) mx = std::max(mx, static_cast<double>(v));
        double sum = 0.0;
        for (float v : row) sum += std::exp(static_cast<double>(v) - mx);
        total += static_cast<double>(row[static_cast<std::size_t>(label[i])]) - mx - std::log(sum);
    }
    return total;
}

LabelScore score_label(const ModelWeights& w, const RotatedKV& context, std::span<const std::int32_t> query_ids,
                       std::span<const std::int32_t> label_ids) {
    if (label_ids.empty()) throw ValidationError("label must have at least one token");
    if (query_ids.empty()) throw ValidationError("query must have at least one token");
    for (auto id : label_ids)
        if (id < 0 || id >= w.config().vocab_size) throw ValidationError("label token outside vocabulary");
    std::vector<std::int32_t> ids(query_ids.begin(), query_ids.end());
    ids.insert(ids.end(), label_ids.begin(), label_ids.end() - 1);
    const std::int64_t start = context.positions.empty() ? 0 : context.positions.back() + 1;
    QueryResult qr = forward_query(w, context, TokenSequence::sequential(std::move(ids), start));
    LabelScore score;
    score.log_prob = label_log_prob(qr.logits, query_ids.size() - 1, label_ids);
    score.attended_pairs = qr.attended_pairs;
    score.tokens = qr.logits.dim(0);
    return score;
}

}  // namespace dbsa
