#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "dbsa/kv_store.hpp"

namespace dbsa {

// Lowercased alphanumeric runs.
std::vector<std::string> bm25_tokenize(std::string_view text);

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

// Okapi BM25 over an inverted index. Document ids are unit ids.
class Bm25Index {
public:
    Bm25Index() = default;
    Bm25Index(const std::vector<std::string>& documents, Granularity granularity, Bm25Params params = {});

    std::size_t n_docs() const { return doc_lengths_.size(); }
    Granularity granularity() const { return granularity_; }
    const Bm25Params& params() const { return params_; }
    double avg_doc_length() const { return avgdl_; }
    std::size_t doc_length(std::size_t doc) const { return doc_lengths_.at(doc); }
    std::size_t doc_frequency(const std::string& term) const;
    double idf(const std::string& term) const;

    double score(const std::vector<std::string>& query_terms, std::size_t doc) const;
    // Scores of every document.
    std::vector<double> score_all(const std::vector<std::string>& query_terms) const;

    nlohmann::json to_json() const;
    static Bm25Index from_json(const nlohmann::json& j);

private:
    struct Posting {
        std::uint32_t doc;
        std::uint32_t tf;
    };
    Granularity granularity_ = Granularity::Block;
    Bm25Params params_;
    double avgdl_ = 0.0;
    std::vector<std::uint32_t> doc_lengths_;
    std::unordered_map<std::string, std::vector<Posting>> postings_;  // sorted by doc

    double term_weight(double idf, std::uint32_t tf, std::uint32_t dl) const;
    void finalize();
};

struct GroupingStrategy {
    enum class Kind { Random, Clustered, ClusteredDiverse };
    Kind kind = Kind::Random;
    std::uint64_t seed = 0;
    double swap_fraction = 0.10;

    // "random" | "clustered" | "clustered-diverse"
    static GroupingStrategy parse(std::string_view name, std::uint64_t seed);
    std::string name() const;
};

// Example indices per block, in block order.
using BlockPartition = std::vector<std::vector<std::size_t>>;

// ceil(n/k) blocks of k examples (the last may be shorter).
BlockPartition group(const std::vector<std::string>& example_texts, std::size_t block_size, GroupingStrategy strategy);

// Pure k-medoids clustering on (1 - normalized BM25 similarity), balanced
// so no cluster exceeds `capacity`. Returns clusters ordered by their
// smallest member.
std::vector<std::vector<std::size_t>> bm25_kmedoids(const std::vector<std::string>& texts, std::size_t n_clusters,
                                                    std::size_t capacity, std::uint64_t seed);

// Units retrieved for a budget of ceil(ratio * n_units).
std::size_t retrieval_budget(double ratio, std::size_t n_units);

// Anchor (unit 0) first, then the top-scoring units by BM25 (ties by
// ascending id), in descending score order.
Selection select(const Bm25Index& index, std::string_view query_text, double ratio);

// Plain top-k by BM25 without an anchor; ids returned ascending.
std::vector<std::uint32_t> top_units(const Bm25Index& index, std::string_view query_text, double ratio);

struct OrderingStrategy {
    enum class Kind { InOrder, LowToHigh, Reverse };
    Kind kind = Kind::InOrder;

    // "in-order" | "low-to-high" | "reverse"
    static OrderingStrategy parse(std::string_view name);
    std::string name() const;
};

// Reorders the non-anchor units; the anchor stays first.
Selection order(const Selection& selection, OrderingStrategy strategy);

}  // namespace dbsa
