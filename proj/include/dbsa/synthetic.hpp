#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dbsa/pipeline.hpp"

namespace dbsa {

// Associative-recall classification: every label owns a few cue words and a
// query contains one cue among filler words, so the answer can be copied
// from any retrieved demonstration that shares the cue.
struct SyntheticTask {
    TaskSpec task;
    std::vector<Demonstration> tests;
};

SyntheticTask make_recall_task(std::size_t n_pool, std::size_t n_tests, std::size_t n_labels, std::uint64_t seed);

}  // namespace dbsa
