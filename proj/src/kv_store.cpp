#include "dbsa/kv_store.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "dbsa/binary_io.hpp"
#include "dbsa/error.hpp"

namespace dbsa {

SegmentedKVCache::SegmentedKVCache(Digest config_hash, std::size_t n_layers, std::size_t n_kv_heads,
                                   std::size_t head_dim)
    : config_hash_(config_hash), n_layers_(n_layers), n_kv_heads_(n_kv_heads), head_dim_(head_dim) {}

SegmentedKVCache SegmentedKVCache::for_config(const ModelConfig& c) {
    return SegmentedKVCache(c.hash(), static_cast<std::size_t>(c.n_layers), static_cast<std::size_t>(c.n_kv_heads),
                            static_cast<std::size_t>(c.head_dim));
}

std::size_t SegmentedKVCache::total_tokens() const {
    return blocks_.empty() ? 0 : static_cast<std::size_t>(blocks_.back().position_begin + blocks_.back().token_count);
}

void SegmentedKVCache::append_block(std::uint32_t block_id, PreRotationKV kv, Digest text_digest,
                                    std::vector<ExampleSpan> examples) {
    if (sealed_) throw Error("cache is sealed");
    if (block_id != blocks_.size())
        throw ValidationError("append_block: expected block id " + std::to_string(blocks_.size()) + ", got " +
                              std::to_string(block_id));
    if (kv.config_hash != config_hash_) throw CompatibilityError("append_block: config hash mismatch");
    if (kv.layers.size() != n_layers_) throw ShapeError("append_block: layer count mismatch");
    const std::size_t t = kv.tokens();
    if (t == 0) throw ValidationError("append_block: empty block");
    const auto begin = static_cast<std::int64_t>(total_tokens());
    for (std::size_t i = 0; i < t; ++i)
        if (kv.positions[i] != begin + static_cast<std::int64_t>(i))
            throw ValidationError("append_block: positions must continue the sequence at " + std::to_string(begin));
    const std::vector<std::size_t> dims{t, n_kv_heads_, head_dim_};
    for (const auto& layer : kv.layers)
        if (layer.keys.dims() != dims || layer.values.dims() != dims) throw ShapeError("append_block: segment dims");

    std::uint32_t covered = 0;
    for (const auto& e : examples) {
        if (e.offset != covered || e.length == 0) throw ValidationError("append_block: example spans must tile the block");
        covered += e.length;
    }
    if (examples.empty()) examples.push_back({0, static_cast<std::uint32_t>(t)});
    if (covered != 0 && covered != t) throw ValidationError("append_block: example spans must tile the block");

    for (std::uint32_t e = 0; e < examples.size(); ++e) example_index_.emplace_back(block_id, e);
    blocks_.push_back({block_id, static_cast<std::uint32_t>(t), static_cast<std::uint64_t>(begin), text_digest,
                       std::move(examples)});
    segments_.push_back(std::move(kv.layers));
}

RotatedKV SegmentedKVCache::rotated_blocks(std::span<const std::size_t> ids, float rope_theta) const {
    std::vector<RotatedKV> parts;
    for (std::size_t id : ids) {
        const auto& rec = blocks_.at(id);
        PreRotationKV kv;
        kv.config_hash = config_hash_;
        kv.layers = segments_[id];
        kv.positions.resize(rec.token_count);
        for (std::size_t i = 0; i < rec.token_count; ++i)
            kv.positions[i] = static_cast<std::int64_t>(rec.position_begin + i);
        parts.push_back(rotate(kv, rope_theta));
    }
    if (parts.empty()) {
        RotatedKV empty;
        empty.config_hash = config_hash_;
        empty.layers.resize(n_layers_);
        return empty;
    }
    return concat(parts);
}

Granularity parse_granularity(std::string_view name) {
    if (name == "block") return Granularity::Block;
    if (name == "example") return Granularity::Example;
    throw ValidationError("unknown granularity '" + std::string(name) + "'");
}

const char* granularity_name(Granularity g) { return g == Granularity::Block ? "block" : "example"; }

AssembledCache assemble(const SegmentedKVCache& cache, const Selection& selection, const ModelConfig& config) {
    if (cache.config_hash() != config.hash()) throw CompatibilityError("assemble: cache built for another config");
    if (selection.units.empty() || selection.units.front() != 0)
        throw ValidationError("assemble: selection must start with the anchor unit");
    const std::size_t n_units = selection.granularity == Granularity::Block ? cache.n_blocks() : cache.n_examples();
    std::set<std::uint32_t> seen;
    struct Piece {
        std::uint32_t block, offset, length;
    };
    std::vector<Piece> pieces;
    for (auto u : selection.units) {
        if (u >= n_units) throw ValidationError("assemble: unknown unit id " + std::to_string(u));
        if (!seen.insert(u).second) throw ValidationError("assemble: duplicate unit id " + std::to_string(u));
        if (selection.granularity == Granularity::Block) {
            pieces.push_back({u, 0, cache.block(u).token_count});
        } else {
            auto [b, e] = cache.locate_example(u);
            const auto& span = cache.block(b).examples[e];
            pieces.push_back({b, span.offset, span.length});
        }
    }

    std::size_t total = 0;
    for (const auto& p : pieces) total += p.length;
    const std::size_t layers = cache.n_layers();
    const std::size_t row = cache.n_kv_heads() * cache.head_dim();

    AssembledCache out;
    out.kv.config_hash = cache.config_hash();
    out.kv.layers.resize(layers);
    out.kv.positions.resize(total);
    for (std::size_t i = 0; i < total; ++i) out.kv.positions[i] = static_cast<std::int64_t>(i);
    out.provenance.reserve(total);
    for (const auto& p : pieces)
        for (std::uint32_t i = 0; i < p.length; ++i) out.provenance.push_back({p.block, p.offset + i});
    if (total == 0) return out;

    for (std::size_t l = 0; l < layers; ++l) {
        Tensor keys({total, cache.n_kv_heads(), cache.head_dim()});
        Tensor values({total, cache.n_kv_heads(), cache.head_dim()});
        std::size_t at = 0;
        for (const auto& p : pieces) {
            const auto& seg = cache.segment(l, p.block);
            const auto src_k = seg.keys.data().subspan(p.offset * row, static_cast<std::size_t>(p.length) * row);
            const auto src_v = seg.values.data().subspan(p.offset * row, static_cast<std::size_t>(p.length) * row);
            std::copy(src_k.begin(), src_k.end(), keys.data().begin() + static_cast<std::ptrdiff_t>(at * row));
            std::copy(src_v.begin(), src_v.end(), values.data().begin() + static_cast<std::ptrdiff_t>(at * row));
            at += p.length;
        }
        auto kd = keys.data();
#pragma omp parallel for schedule(static) num_threads(max_threads()) if (total * row > 65536)
        for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(total); ++t)
            for (std::size_t h = 0; h < cache.n_kv_heads(); ++h)
                rope_rotate_inplace(kd.subspan(static_cast<std::size_t>(t) * row + h * cache.head_dim(), cache.head_dim()),
                                    t, config.rope_theta);
        out.kv.layers[l] = {std::move(keys), std::move(values)};
    }
    return out;
}

// Cache file layout (little-endian):
//   "DBSACACH" | u32 version | config_hash[32] | u32 n_layers | u32 n_kv_heads |
//   u32 head_dim | u32 n_blocks |
//   block table: n_blocks x (u32 id | u32 token_count | u64 position_begin |
//                digest[32] | u32 n_examples | n_examples x (u32 offset | u32 length))
//   segments: for layer, for block: keys f32[tokens*kv_heads*head_dim], values f32[same]
namespace {

constexpr char kMagic[9] = "DBSACACH";
constexpr std::uint32_t kVersion = 1;

}  // namespace

std::uint64_t cache_header_bytes() { return 8 + 4 + 32 + 4 * 4; }

std::uint64_t cache_table_bytes(const SegmentedKVCache& cache) {
    std::uint64_t n = 0;
    for (const auto& b : cache.blocks()) n += 4 + 4 + 8 + 32 + 4 + 8 * b.examples.size();
    return n;
}

void serialize(const SegmentedKVCache& cache, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open " + path.string() + " for writing");
    io::put_bytes(out, kMagic, 8);
    io::put_u32(out, kVersion);
    io::put_bytes(out, cache.config_hash().data(), 32);
    io::put_u32(out, static_cast<std::uint32_t>(cache.n_layers()));
    io::put_u32(out, static_cast<std::uint32_t>(cache.n_kv_heads()));
    io::put_u32(out, static_cast<std::uint32_t>(cache.head_dim()));
    io::put_u32(out, static_cast<std::uint32_t>(cache.n_blocks()));
    for (const auto& b : cache.blocks()) {
        io::put_u32(out, b.id);
        io::put_u32(out, b.token_count);
        io::put_u64(out, b.position_begin);
        io::put_bytes(out, b.text_digest.data(), 32);
        io::put_u32(out, static_cast<std::uint32_t>(b.examples.size()));
        for (const auto& e : b.examples) {
            io::put_u32(out, e.offset);
            io::put_u32(out, e.length);
        }
    }
    for (std::size_t l = 0; l < cache.n_layers(); ++l)
        for (std::size_t b = 0; b < cache.n_blocks(); ++b) {
            io::put_f32s(out, cache.segment(l, b).keys.data());
            io::put_f32s(out, cache.segment(l, b).values.data());
        }
    if (!out) throw Error("failed writing " + path.string());
}

SegmentedKVCache deserialize(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open cache file " + path.string());
    io::expect_magic(in, kMagic);
    const auto version = io::get_u32(in, "version");
    if (version != kVersion) throw FormatError("unsupported cache file version " + std::to_string(version));
    Digest hash{};
    io::get_exact(in, hash.data(), 32, "config hash");
    const auto layers = io::get_u32(in, "layer count");
    const auto kv_heads = io::get_u32(in, "kv head count");
    const auto head_dim = io::get_u32(in, "head dim");
    const auto n_blocks = io::get_u32(in, "block count");
    if (layers == 0 || kv_heads == 0 || head_dim == 0) throw FormatError("cache header has zero dims");

    std::vector<BlockRecord> table(n_blocks);
    for (auto& b : table) {
        b.id = io::get_u32(in, "block id");
        b.token_count = io::get_u32(in, "token count");
        b.position_begin = io::get_u64(in, "position");
        io::get_exact(in, b.text_digest.data(), 32, "text digest");
        const auto n_ex = io::get_u32(in, "example count");
        if (n_ex > b.token_count) throw FormatError("block table: more examples than tokens");
        b.examples.resize(n_ex);
        for (auto& e : b.examples) {
            e.offset = io::get_u32(in, "example offset");
            e.length = io::get_u32(in, "example length");
        }
    }
    // segments_[block][layer], read layer-major
    std::vector<std::vector<LayerKV>> segs(n_blocks, std::vector<LayerKV>(layers));
    for (std::uint32_t l = 0; l < layers; ++l)
        for (std::uint32_t b = 0; b < n_blocks; ++b) {
            const std::vector<std::size_t> dims{table[b].token_count, kv_heads, head_dim};
            Tensor k(dims), v(dims);
            io::get_f32s(in, k.data(), "key segment");
            io::get_f32s(in, v.data(), "value segment");
            segs[b][l] = {std::move(k), std::move(v)};
        }
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after cache segments");

    SegmentedKVCache cache(hash, layers, kv_heads, head_dim);
    for (std::uint32_t b = 0; b < n_blocks; ++b) {
        PreRotationKV kv;
        kv.config_hash = hash;
        kv.layers = std::move(segs[b]);
        kv.positions.resize(table[b].token_count);
        for (std::size_t i = 0; i < kv.positions.size(); ++i)
            kv.positions[i] = static_cast<std::int64_t>(table[b].position_begin + i);
        try {
            cache.append_block(table[b].id, std::move(kv), table[b].text_digest, table[b].examples);
        } catch (const Error& e) {
            throw FormatError(std::string("inconsistent block table: ") + e.what());
        }
    }
    cache.seal();
    return cache;
}

SegmentedKVCache deserialize(const std::filesystem::path& path, const ModelConfig& expected) {
    SegmentedKVCache cache = deserialize(path);
    if (cache.config_hash() != expected.hash())
        throw CompatibilityError("cache " + path.string() + " was built for a different model config");
    return cache;
}

std::uint64_t storage_bytes(KVShape shape, std::uint64_t n_tokens, std::uint64_t bytes_per_value) {
    if (bytes_per_value != 2 && bytes_per_value != 4) throw ValidationError("bytes per value must be 2 or 4");
    return 2 * shape.n_layers * shape.n_kv_heads * shape.head_dim * bytes_per_value * n_tokens;
}

}  // namespace dbsa
