#pragma once

#include <cstdint>
#include <span>
#include <utility>

namespace dbsa {

// Counter-based generator: output i of stream s is splitmix64 of
// (seed, s, i), so streams are reproducible on every platform and cheap to
// split.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

    std::uint64_t next_u64();
    // Uniform in [0, 1).
    double uniform();
    float uniform(float lo, float hi);
    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n);

    Rng split(std::uint64_t stream) const;

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace dbsa
