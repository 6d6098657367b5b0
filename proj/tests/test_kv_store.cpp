#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "dbsa/error.hpp"
#include "dbsa/kv_store.hpp"
#include "dbsa/pipeline.hpp"
#include "dbsa/sparse_mask.hpp"
#include "test_support.hpp"

using namespace dbsa;
namespace fs = std::filesystem;

namespace {

std::vector<std::vector<std::int32_t>> make_blocks(std::size_t n, std::size_t len, std::uint64_t seed) {
    std::vector<std::vector<std::int32_t>> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(testing::random_ids(len + i % 3, seed + i));
    return out;
}

SegmentedKVCache build(const ModelWeights& w, const std::vector<std::vector<std::int32_t>>& blocks,
                       AttentionPattern p = AttentionPattern::sink_prev_self(2)) {
    PoolEncoder enc(w, p);
    for (const auto& b : blocks) enc.append(b, sha256(std::string(b.begin(), b.end())), {});
    return std::move(enc).take();
}

double max_dev(const Tensor& a, std::span<const float> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, double(std::abs(a.values()[i] - b[i])));
    return m;
}

std::string read_all(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void write_all(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

struct TempDir {
    fs::path path;
    TempDir() : path(fs::temp_directory_path() / ("dbsa_kv_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)))) {
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("appending to an empty cache starts at position 0") {
    const ModelWeights w = init_random(testing::tiny_config(), 1);
    const auto cache = build(w, make_blocks(3, 5, 1));
    CHECK(cache.block(0).position_begin == 0);
    CHECK(cache.block(1).position_begin == cache.block(0).token_count);
    CHECK(cache.block(2).position_begin == cache.block(0).token_count + cache.block(1).token_count);
    CHECK(cache.total_tokens() == 5 + 6 + 7);
    // Default spans cover the block as one example.
    CHECK(cache.n_examples() == 3);
}

TEST_CASE("appending leaves earlier blocks untouched") {
    const ModelWeights w = init_random(testing::tiny_config(), 2);
    const auto blocks = make_blocks(5, 6, 2);
    PoolEncoder enc(w, AttentionPattern::sink_prev_self(2));
    for (std::size_t i = 0; i < 4; ++i) enc.append(blocks[i], Digest{}, {});
    const SegmentedKVCache before = enc.cache();
    enc.append(blocks[4], Digest{}, {});
    for (std::size_t b = 0; b < 4; ++b) {
        CHECK(enc.cache().block(b) == before.block(b));
        for (std::size_t l = 0; l < 2; ++l) {
            CHECK(enc.cache().segment(l, b).keys == before.segment(l, b).keys);
            CHECK(enc.cache().segment(l, b).values == before.segment(l, b).values);
        }
    }
}

TEST_CASE("incremental build equals one-shot sparse encoding") {
    const ModelWeights w = init_random(testing::tiny_config(), 3);
    const auto blocks = make_blocks(6, 7, 3);
    const auto cache = build(w, blocks);
    std::vector<std::int32_t> all;
    std::vector<std::size_t> lens;
    for (const auto& b : blocks) {
        all.insert(all.end(), b.begin(), b.end());
        lens.push_back(b.size());
    }
    const TokenMask tm(build_block_mask(blocks.size(), AttentionPattern::sink_prev_self(2)), lens);
    const EncodeResult one =
        forward_encode(w, TokenSequence::sequential(all), empty_context(w.config()), tm.materialize());
    double dev = 0.0;
    for (std::size_t l = 0; l < 2; ++l)
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const std::size_t row = one.kv.layers[l].keys.row_size();
            const auto k = one.kv.layers[l].keys.data().subspan(tm.block_start(b) * row, lens[b] * row);
            const auto v = one.kv.layers[l].values.data().subspan(tm.block_start(b) * row, lens[b] * row);
            dev = std::max(dev, max_dev(cache.segment(l, b).keys, k));
            dev = std::max(dev, max_dev(cache.segment(l, b).values, v));
        }
    CHECK(dev <= 1e-6);
}

TEST_CASE("append validates id, hash and positions") {
    const ModelWeights w = init_random(testing::tiny_config(), 4);
    const auto ids = testing::random_ids(4, 4);
    EncodeResult r = forward_encode(w, TokenSequence::sequential(ids), empty_context(w.config()), Mask2D::causal(4));
    SegmentedKVCache c = SegmentedKVCache::for_config(w.config());
    CHECK_THROWS_AS(c.append_block(1, r.kv, Digest{}, {}), ValidationError);
    PreRotationKV bad_hash = r.kv;
    bad_hash.config_hash[0] ^= 1;
    CHECK_THROWS_AS(c.append_block(0, bad_hash, Digest{}, {}), CompatibilityError);
    PreRotationKV shifted = r.kv;
    for (auto& p : shifted.positions) p += 3;
    CHECK_THROWS_AS(c.append_block(0, shifted, Digest{}, {}), ValidationError);
    CHECK_THROWS_AS(c.append_block(0, r.kv, Digest{}, {{0, 2}, {3, 1}}), ValidationError);
    c.append_block(0, r.kv, Digest{}, {{0, 2}, {2, 2}});
    CHECK(c.n_examples() == 2);
    CHECK(c.locate_example(1) == std::pair<std::uint32_t, std::uint32_t>{0, 1});
    c.seal();
    CHECK_THROWS(c.append_block(1, r.kv, Digest{}, {}));
}

TEST_CASE("assembling every block in order reproduces the live keys") {
    const ModelWeights w = init_random(testing::tiny_config(), 5);
    const auto cache = build(w, make_blocks(4, 5, 5));
    Selection s;
    s.units = {0, 1, 2, 3};
    s.scores.assign(4, 0.0);
    const AssembledCache a = assemble(cache, s, w.config());
    const std::vector<std::size_t> ids = {0, 1, 2, 3};
    const RotatedKV live = cache.rotated_blocks(ids, w.config().rope_theta);
    CHECK(a.kv.positions == live.positions);
    for (std::size_t l = 0; l < 2; ++l) {
        CHECK(a.kv.layers[l].keys == live.layers[l].keys);
        CHECK(a.kv.layers[l].values == live.layers[l].values);
    }
}

TEST_CASE("assembled positions and provenance") {
    const ModelWeights w = init_random(testing::tiny_config(), 6);
    const auto cache = build(w, make_blocks(10, 4, 6));
    Selection s;
    s.units = {0, 5, 9};
    s.scores = {0.0, 1.0, 2.0};
    const AssembledCache a = assemble(cache, s, w.config());
    const std::size_t total = cache.block(0).token_count + cache.block(5).token_count + cache.block(9).token_count;
    CHECK(a.tokens() == total);
    CHECK(a.provenance.size() == total);
    for (std::size_t i = 0; i < total; ++i) CHECK(a.kv.positions[i] == static_cast<std::int64_t>(i));
    CHECK(a.provenance[cache.block(0).token_count] == Provenance{5, 0});
    CHECK(a.provenance.back() == Provenance{9, cache.block(9).token_count - 1});
    // Keys equal the stored pre-rotation keys rotated at the new position.
    const std::size_t at = cache.block(0).token_count + 1;
    const std::size_t hd = cache.head_dim();
    const auto pre = cache.segment(1, 5).keys.row(1);
    Tensor head({hd}, {pre.begin(), pre.begin() + static_cast<std::ptrdiff_t>(hd)});
    const Tensor want = rope_rotate(head, static_cast<std::int64_t>(at), w.config().rope_theta);
    for (std::size_t i = 0; i < hd; ++i) CHECK(a.kv.layers[1].keys.row(at)[i] == want.values()[i]);
    CHECK(a.kv.layers[1].values.row(at)[0] == cache.segment(1, 5).values.row(1)[0]);
}

TEST_CASE("assembly rejects bad selections") {
    const ModelWeights w = init_random(testing::tiny_config(), 7);
    const auto cache = build(w, make_blocks(3, 4, 7));
    Selection s;
    s.units = {0, 7};
    s.scores = {0, 0};
    CHECK_THROWS_AS(assemble(cache, s, w.config()), ValidationError);
    s.units = {0, 1, 1};
    s.scores = {0, 0, 0};
    CHECK_THROWS_AS(assemble(cache, s, w.config()), ValidationError);
    s.units = {1, 0};
    s.scores = {0, 0};
    CHECK_THROWS_AS(assemble(cache, s, w.config()), ValidationError);
    s.units = {0};
    s.scores = {0};
    CHECK_THROWS_AS(assemble(cache, s, testing::tiny_config(32, 2, 4, 4)), CompatibilityError);
}

TEST_CASE("example-granularity assembly picks demo spans") {
    const ModelWeights w = init_random(testing::tiny_config(), 8);
    PoolEncoder enc(w, AttentionPattern::sink_prev_self(2));
    enc.append(testing::random_ids(6, 1), Digest{}, {{0, 2}, {2, 4}});
    enc.append(testing::random_ids(5, 2), Digest{}, {{0, 3}, {3, 2}});
    Selection s;
    s.granularity = Granularity::Example;
    s.units = {0, 3};
    s.scores = {0, 0};
    const AssembledCache a = assemble(enc.cache(), s, w.config());
    CHECK(a.tokens() == 4);
    CHECK(a.provenance[2] == Provenance{1, 3});
    CHECK(a.provenance[3] == Provenance{1, 4});
}

TEST_CASE("serialize round-trip is byte-identical") {
    TempDir dir;
    const ModelWeights w = init_random(testing::tiny_config(), 9);
    PoolEncoder enc(w, AttentionPattern::sink_prev_self(2));
    enc.append(testing::random_ids(6, 1), sha256("a"), {{0, 2}, {2, 4}});
    enc.append(testing::random_ids(5, 2), sha256("b"), {});
    SegmentedKVCache cache = std::move(enc).take();
    cache.seal();
    serialize(cache, dir.path / "c.bin");
    const SegmentedKVCache back = deserialize(dir.path / "c.bin", w.config());
    CHECK(back == cache);
    serialize(back, dir.path / "d.bin");
    CHECK(read_all(dir.path / "c.bin") == read_all(dir.path / "d.bin"));
    CHECK_THROWS_AS(deserialize(dir.path / "c.bin", testing::tiny_config(32, 2, 4, 4)), CompatibilityError);
}

TEST_CASE("corrupt cache files are format errors") {
    TempDir dir;
    const ModelWeights w = init_random(testing::tiny_config(), 10);
    const auto cache = build(w, make_blocks(2, 4, 10));
    serialize(cache, dir.path / "c.bin");
    const std::string bytes = read_all(dir.path / "c.bin");
    write_all(dir.path / "t.bin", bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_AS(deserialize(dir.path / "t.bin"), FormatError);
    std::string magic = bytes;
    magic[1] = 'Z';
    write_all(dir.path / "m.bin", magic);
    CHECK_THROWS_AS(deserialize(dir.path / "m.bin"), FormatError);
    write_all(dir.path / "x.bin", bytes + "junk");
    CHECK_THROWS_AS(deserialize(dir.path / "x.bin"), FormatError);
    write_all(dir.path / "h.bin", bytes.substr(0, 20));
    CHECK_THROWS_AS(deserialize(dir.path / "h.bin"), FormatError);
}

TEST_CASE("one-block cache file size follows the format") {
    TempDir dir;
    const ModelWeights w = init_random(testing::tiny_config(), 11);
    const auto cache = build(w, {testing::random_ids(9, 11)});
    serialize(cache, dir.path / "c.bin");
    const std::uint64_t layers = 2, tokens = 9, kv_heads = 2, head_dim = 8;
    const std::uint64_t expected = cache_header_bytes() + 2 * layers * tokens * kv_heads * head_dim * 4 + cache_table_bytes(cache);
    CHECK(fs::file_size(dir.path / "c.bin") == expected);
    CHECK(cache_table_bytes(cache) == 4 + 4 + 8 + 32 + 4 + 8);
}

TEST_CASE("storage bytes") {
    const KVShape llama{32, 8, 128};
    CHECK(storage_bytes(llama, 1, 2) == 131072);
    CHECK(static_cast<double>(storage_bytes(llama, 1, 2)) / (1024.0 * 1024.0) == 0.125);
    const double gib = static_cast<double>(storage_bytes(llama, 30000, 2)) / (1024.0 * 1024.0 * 1024.0);
    CHECK(gib >= 3.66);
    CHECK(gib <= 3.75);
    CHECK(storage_bytes(llama, 0, 2) == 0);
    CHECK(storage_bytes(llama, 1, 4) == 262144);
    CHECK_THROWS_AS(storage_bytes(llama, 1, 3), ValidationError);
}

TEST_CASE("granularity names") {
    CHECK(parse_granularity("block") == Granularity::Block);
    CHECK(parse_granularity("example") == Granularity::Example);
    CHECK(std::string(granularity_name(Granularity::Example)) == "example");
    CHECK_THROWS_AS(parse_granularity("token"), ValidationError);
}
