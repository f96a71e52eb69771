#pragma once

#include <cstdint>
#include <cstddef>
#include <vector>

namespace hivec {

/// Deterministic xoshiro256++ generator seeded through splitmix64.
/// Identical seeds give identical draw streams on every platform; all
/// distribution transforms below are hand-rolled so no implementation-defined
/// library behaviour leaks into the stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform();

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t uniform_below(std::uint64_t n);

    /// Standard normal via Box-Muller (both values of each pair are used).
    double normal();

    std::vector<double> normal_vector(std::size_t n);

    /// Fisher-Yates shuffle of index order, deterministic for a given stream.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Derives an independent generator; used to give parallel experiment
    /// cells unrelated streams from one root seed.
    Rng fork(std::uint64_t stream_id);

private:
    std::uint64_t state_[4];
    bool have_cached_normal_ = false;
    double cached_normal_ = 0.0;
};

}  // namespace hivec
