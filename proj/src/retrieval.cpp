#include <algorithm>
#include <cmath>
#include <numeric>

#include "dbsa/error.hpp"
#include "dbsa/retrieval.hpp"
#include "dbsa/rng.hpp"

namespace dbsa {

GroupingStrategy GroupingStrategy::parse(std::string_view name, std::uint64_t seed) {
    if (name == "random") return {Kind::Random, seed};
    if (name == "clustered") return {Kind::Clustered, seed};
    if (name == "clustered-diverse") return {Kind::ClusteredDiverse, seed};
    throw ValidationError("unknown grouping '" + std::string(name) + "'");
}

std::string GroupingStrategy::name() const {
    switch (kind) {
        case Kind::Random: return "random";
        case Kind::Clustered: return "clustered";
        case Kind::ClusteredDiverse: return "clustered-diverse";
    }
    return "unknown";
}

OrderingStrategy OrderingStrategy::parse(std::string_view name) {
    if (name == "in-order") return {Kind::InOrder};
    if (name == "low-to-high") return {Kind::LowToHigh};
    if (name == "reverse") return {Kind::Reverse};
    throw ValidationError("unknown ordering '" + std::string(name) + "'");
}

std::string OrderingStrategy::name() const {
    switch (kind) {
        case Kind::InOrder: return "in-order";
        case Kind::LowToHigh: return "low-to-high";
        case Kind::Reverse: return "reverse";
    }
    return "unknown";
}

namespace {

BlockPartition chunk(const std::vector<std::size_t>& sequence, std::size_t k) {
    BlockPartition blocks;
    for (std::size_t i = 0; i < sequence.size(); i += k)
        blocks.emplace_back(sequence.begin() + static_cast<std::ptrdiff_t>(i),
                            sequence.begin() + static_cast<std::ptrdiff_t>(std::min(i + k, sequence.size())));
    return blocks;
}

// Dense n x n distance matrix, 1 - symmetric normalized BM25 similarity.
std::vector<double> bm25_distances(const std::vector<std::string>& texts) {
    const std::size_t n = texts.size();
    const Bm25Index index(texts, Granularity::Example);
    std::vector<double> raw(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto scores = index.score_all(bm25_tokenize(texts[i]));
        std::copy(scores.begin(), scores.end(), raw.begin() + static_cast<std::ptrdiff_t>(i * n));
    }
    auto normalized = [&](std::size_t i, std::size_t j) {
        const double self = raw[i * n + i];
        return self > 0.0 ? std::clamp(raw[i * n + j] / self, 0.0, 1.0) : 0.0;
    };
    std::vector<double> dist(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) dist[i * n + j] = 1.0 - 0.5 * (normalized(i, j) + normalized(j, i));
    return dist;
}

// Moves exactly `count` examples into a different block while keeping
// block sizes: pick examples with at most count/2 from any one block, sort
// them by block, then rotate by count/2.
void diversify(BlockPartition& blocks, std::size_t count, Rng& rng) {
    if (blocks.size() < 2) return;
    std::vector<std::pair<std::size_t, std::size_t>> slots;  // (block, position)
    for (std::size_t b = 0; b < blocks.size(); ++b)
        for (std::size_t p = 0; p < blocks[b].size(); ++p) slots.emplace_back(b, p);
    rng.shuffle(std::span(slots));

    for (std::size_t target = count; target >= 2; --target) {
        const std::size_t cap = target / 2;
        std::vector<std::size_t> per_block(blocks.size(), 0);
        std::vector<std::pair<std::size_t, std::size_t>> chosen;
        for (const auto& s : slots) {
            if (chosen.size() == target) break;
            if (per_block[s.first] < cap) {
                ++per_block[s.first];
                chosen.push_back(s);
            }
        }
        if (chosen.size() < target) continue;
        std::sort(chosen.begin(), chosen.end());
        std::vector<std::size_t> moved(target);
        for (std::size_t i = 0; i < target; ++i) moved[i] = blocks[chosen[i].first][chosen[i].second];
        for (std::size_t i = 0; i < target; ++i) {
            const auto& dst = chosen[(i + cap) % target];
            blocks[dst.first][dst.second] = moved[i];
        }
        return;
    }
}

}  // namespace

std::vector<std::vector<std::size_t>> bm25_kmedoids(const std::vector<std::string>& texts, std::size_t n_clusters,
                                                    std::size_t capacity, std::uint64_t seed) {
    const std::size_t n = texts.size();
    if (n == 0) throw ValidationError("cannot cluster an empty pool");
    n_clusters = std::clamp<std::size_t>(n_clusters, 1, n);
    if (capacity * n_clusters < n) throw ValidationError("cluster capacity too small for the pool");
    const auto dist = bm25_distances(texts);
    auto d = [&](std::size_t i, std::size_t j) { return dist[i * n + j]; };

    Rng rng(seed, 0x6B6D65646F6964ull);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span(order));
    std::vector<std::size_t> medoids(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_clusters));

    std::vector<std::size_t> assign(n, 0);
    for (int iter = 0; iter < 50; ++iter) {
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < n_clusters; ++c)
                if (d(i, medoids[c]) < d(i, medoids[best])) best = c;
            assign[i] = best;
        }
        bool changed = false;
        for (std::size_t c = 0; c < n_clusters; ++c) {
            std::size_t best = medoids[c];
            double best_cost = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                if (assign[i] == c) best_cost += d(i, best);
            for (std::size_t cand = 0; cand < n; ++cand) {
                if (assign[cand] != c || cand == best) continue;
                double cost = 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    if (assign[i] == c) cost += d(i, cand);
                if (cost < best_cost) {
                    best_cost = cost;
                    best = cand;
                }
            }
            if (best != medoids[c]) {
                medoids[c] = best;
                changed = true;
            }
        }
        if (!changed) break;
    }

    // Capacity-constrained assignment: closest (point, medoid) pairs first.
    struct Pair {
        double dist;
        std::size_t point, cluster;
    };
    std::vector<Pair> pairs;
    pairs.reserve(n * n_clusters);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < n_clusters; ++c) pairs.push_back({d(i, medoids[c]), i, c});
    std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        if (a.point != b.point) return a.point < b.point;
        return a.cluster < b.cluster;
    });
    std::vector<std::vector<std::size_t>> clusters(n_clusters);
    std::vector<bool> placed(n, false);
    for (const auto& p : pairs) {
        if (placed[p.point] || clusters[p.cluster].size() >= capacity) continue;
        clusters[p.cluster].push_back(p.point);
        placed[p.point] = true;
    }
    std::erase_if(clusters, [](const auto& c) { return c.empty(); });
    for (auto& c : clusters) std::sort(c.begin(), c.end());
    std::sort(clusters.begin(), clusters.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
    return clusters;
}

BlockPartition group(const std::vector<std::string>& example_texts, std::size_t block_size, GroupingStrategy strategy) {
    if (example_texts.empty()) throw ValidationError("cannot group an empty pool");
    if (block_size < 1) throw ValidationError("block size must be >= 1");
    if (strategy.swap_fraction < 0.0 || strategy.swap_fraction > 1.0)
        throw ValidationError("swap fraction must be in [0, 1]");
    const std::size_t n = example_texts.size();
    const std::size_t n_blocks = (n + block_size - 1) / block_size;

    if (strategy.kind == GroupingStrategy::Kind::Random) {
        std::vector<std::size_t> ids(n);
        std::iota(ids.begin(), ids.end(), 0);
        Rng rng(strategy.seed, 0x67726F7570ull);
        rng.shuffle(std::span(ids));
        return chunk(ids, block_size);
    }

    std::vector<std::size_t> sequence;
    for (const auto& cluster : bm25_kmedoids(example_texts, n_blocks, block_size, strategy.seed))
        sequence.insert(sequence.end(), cluster.begin(), cluster.end());
    BlockPartition blocks = chunk(sequence, block_size);
    if (strategy.kind == GroupingStrategy::Kind::ClusteredDiverse) {
        Rng rng(strategy.seed, 0x73776170ull);
        const auto count = static_cast<std::size_t>(std::floor(strategy.swap_fraction * static_cast<double>(n) + 1e-9));
        diversify(blocks, count, rng);
    }
    return blocks;
}

std::size_t retrieval_budget(double ratio, std::size_t n_units) {
    if (!(ratio > 0.0) || ratio > 1.0) throw ValidationError("retrieval ratio must be in (0, 1]");
    // Tolerance absorbs products like 0.3 * 20 = 6.000000000000001.
    const auto budget = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n_units) - 1e-9));
    return std::clamp<std::size_t>(budget, 1, std::max<std::size_t>(n_units, 1));
}

namespace {

std::vector<std::uint32_t> ranked(const std::vector<double>& scores) {
    std::vector<std::uint32_t> ids(scores.size());
    std::iota(ids.begin(), ids.end(), 0u);
    std::stable_sort(ids.begin(), ids.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    return ids;
}

}  // namespace

Selection select(const Bm25Index& index, std::string_view query_text, double ratio) {
    const std::size_t n = index.n_docs();
    if (n == 0) throw ValidationError("select: empty index");
    const std::size_t budget = retrieval_budget(ratio, n);
    const auto scores = index.score_all(bm25_tokenize(query_text));
    Selection sel;
    sel.granularity = index.granularity();
    sel.units.push_back(0);
    sel.scores.push_back(scores[0]);
    for (auto id : ranked(scores)) {
        if (sel.units.size() == budget) break;
        if (id == 0) continue;
        sel.units.push_back(id);
        sel.scores.push_back(scores[id]);
    }
    return sel;
}

std::vector<std::uint32_t> top_units(const Bm25Index& index, std::string_view query_text, double ratio) {
    const std::size_t budget = retrieval_budget(ratio, index.n_docs());
    auto ids = ranked(index.score_all(bm25_tokenize(query_text)));
    ids.resize(std::min(budget, ids.size()));
    std::sort(ids.begin(), ids.end());
    return ids;
}

Selection order(const Selection& selection, OrderingStrategy strategy) {
    if (selection.units.empty()) throw ValidationError("order: empty selection");
    if (selection.scores.size() != selection.units.size()) throw ShapeError("order: scores do not match units");
    std::vector<std::size_t> idx(selection.units.size());
    std::iota(idx.begin(), idx.end(), 0);
    const auto& u = selection.units;
    const auto& s = selection.scores;
    auto rest = idx.begin() + 1;
    if (u.front() != 0) rest = idx.begin();  // no anchor present: order everything
    switch (strategy.kind) {
        case OrderingStrategy::Kind::InOrder:
            std::sort(rest, idx.end(), [&](std::size_t a, std::size_t b) { return u[a] < u[b]; });
            break;
        case OrderingStrategy::Kind::LowToHigh:
            std::sort(rest, idx.end(), [&](std::size_t a, std::size_t b) {
                if (s[a] != s[b]) return s[a] < s[b];
                return u[a] < u[b];
            });
            break;
        case OrderingStrategy::Kind::Reverse:
            std::sort(rest, idx.end(), [&](std::size_t a, std::size_t b) { return u[a] > u[b]; });
            break;
    }
    Selection out;
    out.granularity = selection.granularity;
    for (auto i : idx) {
        out.units.push_back(u[i]);
        out.scores.push_back(s[i]);
    }
    return out;
}

}  // namespace dbsa
