#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include "dbsa/error.hpp"
#include "dbsa/retrieval.hpp"

namespace dbsa {

std::vector<std::string> bm25_tokenize(std::string_view text) {
    std::vector<std::string> terms;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            terms.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) terms.push_back(std::move(cur));
    return terms;
}

Bm25Index::Bm25Index(const std::vector<std::string>& documents, Granularity granularity, Bm25Params params)
    : granularity_(granularity), params_(params) {
    doc_lengths_.reserve(documents.size());
    for (std::uint32_t d = 0; d < documents.size(); ++d) {
        const auto terms = bm25_tokenize(documents[d]);
        doc_lengths_.push_back(static_cast<std::uint32_t>(terms.size()));
        std::map<std::string, std::uint32_t> tf;
        for (const auto& t : terms) ++tf[t];
        for (auto& [term, count] : tf) postings_[term].push_back({d, count});
    }
    finalize();
}

void Bm25Index::finalize() {
    double total = 0.0;
    for (auto l : doc_lengths_) total += l;
    avgdl_ = doc_lengths_.empty() ? 0.0 : total / static_cast<double>(doc_lengths_.size());
}

std::size_t Bm25Index::doc_frequency(const std::string& term) const {
    auto it = postings_.find(term);
    return it == postings_.end() ? 0 : it->second.size();
}

double Bm25Index::idf(const std::string& term) const {
    const double n = static_cast<double>(n_docs());
    const double df = static_cast<double>(doc_frequency(term));
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

double Bm25Index::term_weight(double idf, std::uint32_t tf, std::uint32_t dl) const {
    const double f = tf;
    const double norm = avgdl_ > 0.0 ? static_cast<double>(dl) / avgdl_ : 0.0;
    return idf * f * (params_.k1 + 1.0) / (f + params_.k1 * (1.0 - params_.b + params_.b * norm));
}

double Bm25Index::score(const std::vector<std::string>& query_terms, std::size_t doc) const {
    if (doc >= n_docs()) throw ValidationError("bm25: document id out of range");
    double s = 0.0;
    for (const auto& term : query_terms) {
        auto it = postings_.find(term);
        if (it == postings_.end()) continue;
        const auto& list = it->second;
        auto p = std::lower_bound(list.begin(), list.end(), doc,
                                  [](const Posting& a, std::size_t d) { return a.doc < d; });
        if (p == list.end() || p->doc != doc) continue;
        s += term_weight(idf(term), p->tf, doc_lengths_[doc]);
    }
    return s;
}

std::vector<double> Bm25Index::score_all(const std::vector<std::string>& query_terms) const {
    std::vector<double> scores(n_docs(), 0.0);
    for (const auto& term : query_terms) {
        auto it = postings_.find(term);
        if (it == postings_.end()) continue;
        const double w = idf(term);
        for (const auto& p : it->second) scores[p.doc] += term_weight(w, p.tf, doc_lengths_[p.doc]);
    }
    return scores;
}

nlohmann::json Bm25Index::to_json() const {
    // Terms sorted so the sidecar is byte-reproducible.
    std::map<std::string, const std::vector<Posting>*> sorted;
    for (const auto& [term, list] : postings_) sorted.emplace(term, &list);
    nlohmann::json terms = nlohmann::json::object();
    for (const auto& [term, list] : sorted) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& p : *list) arr.push_back({p.doc, p.tf});
        terms[term] = std::move(arr);
    }
    return {{"format", "dbsa-bm25"},
            {"version", 1},
            {"granularity", granularity_name(granularity_)},
            {"k1", params_.k1},
            {"b", params_.b},
            {"doc_lengths", doc_lengths_},
            {"postings", std::move(terms)}};
}

Bm25Index Bm25Index::from_json(const nlohmann::json& j) {
    Bm25Index idx;
    try {
        if (j.at("format").get<std::string>() != "dbsa-bm25") throw FormatError("not a BM25 index sidecar");
        idx.granularity_ = parse_granularity(j.at("granularity").get<std::string>());
        idx.params_ = {j.at("k1").get<double>(), j.at("b").get<double>()};
        idx.doc_lengths_ = j.at("doc_lengths").get<std::vector<std::uint32_t>>();
        for (const auto& [term, arr] : j.at("postings").items()) {
            auto& list = idx.postings_[term];
            for (const auto& p : arr) {
                const auto doc = p.at(0).get<std::uint32_t>();
                if (doc >= idx.doc_lengths_.size()) throw FormatError("posting refers to unknown document");
                list.push_back({doc, p.at(1).get<std::uint32_t>()});
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("BM25 index sidecar: ") + e.what());
    }
    idx.finalize();
    return idx;
}

}  // namespace dbsa
