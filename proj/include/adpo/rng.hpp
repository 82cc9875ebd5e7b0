#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace adpo {

// Seeded random stream. Only the engine from <random> is used: the
// distributions there are implementation-defined, so uniform/normal draws
// are derived here to keep runs bit-identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform();

    // Standard normal via Box-Muller.
    double normal();

    // Uniform integer in [0, n). n must be > 0.
    std::size_t below(std::size_t n);

    bool bernoulli(double p) { return uniform() < p; }

    template <class T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = below(i);
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

// Stable seed derivation; independent of call order and process state.
std::uint64_t derive_seed(std::uint64_t base, std::string_view label);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

} // namespace adpo
