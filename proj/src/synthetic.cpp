#include "dbsa/synthetic.hpp"

#include <string>

#include "dbsa/error.hpp"
#include "dbsa/rng.hpp"

namespace dbsa {

namespace {

const char* const kLabelNames[] = {"alpha", "bravo",  "charlie", "delta", "echo",   "foxtrot", "golf",
                                   "hotel", "india",  "juliet",  "kilo",  "lima",   "mike",    "november",
                                   "oscar", "papa",   "quebec",  "romeo", "sierra", "tango"};
constexpr std::size_t kCuesPerLabel = 3;
constexpr std::size_t kFillerWords = 40;

std::string word(Rng& rng, std::size_t len) {
    std::string w;
    for (std::size_t i = 0; i < len; ++i) w.push_back(static_cast<char>('a' + rng.below(26)));
    return w;
}

}  // namespace

SyntheticTask make_recall_task(std::size_t n_pool, std::size_t n_tests, std::size_t n_labels, std::uint64_t seed) {
    if (n_labels == 0 || n_labels > std::size(kLabelNames)) throw ValidationError("label count must be in [1, 20]");
    Rng rng(seed, 0x73796E7468ull);
    std::vector<std::vector<std::string>> cues(n_labels);
    for (std::size_t l = 0; l < n_labels; ++l)
        for (std::size_t c = 0; c < kCuesPerLabel; ++c) cues[l].push_back(word(rng, 5) + std::to_string(l));
    std::vector<std::string> filler;
    for (std::size_t i = 0; i < kFillerWords; ++i) filler.push_back(word(rng, 3));

    auto make = [&](std::size_t) {
        const std::size_t label = rng.below(n_labels);
        const std::size_t cue_pos = rng.below(3);
        std::string q;
        for (std::size_t i = 0; i < 3; ++i) {
            if (!q.empty()) q += ' ';
            q += i == cue_pos ? cues[label][rng.below(kCuesPerLabel)] : filler[rng.below(filler.size())];
        }
        return Demonstration{q, kLabelNames[label]};
    };

    SyntheticTask out;
    for (std::size_t l = 0; l < n_labels; ++l) out.task.labels.emplace_back(kLabelNames[l]);
    for (std::size_t i = 0; i < n_pool; ++i) out.task.pool.push_back(make(i));
    for (std::size_t i = 0; i < n_tests; ++i) out.tests.push_back(make(i));
    return out;
}

}  // namespace dbsa
