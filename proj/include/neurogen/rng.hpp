// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace ng {

// xoshiro256++ seeded through splitmix64.  Self-contained so streams are
// bit-stable across compilers and standard libraries; std::normal_distribution
// is implementation-defined and would break byte-identical reruns.
class Rng {
  public:
    explicit Rng(std::uint64_t seed);

    // Derive an independent, named sub-stream.  All randomness in a run flows
    // from one config seed through streams like "corpus", "stage2/data".
    Rng stream(std::string_view name) const;

    std::uint64_t next_u64();
    double uniform();                                // [0, 1)
    double normal();                                 // standard normal, Box-Muller
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi_exclusive);

    template <typename T>
    void fill_normal(std::span<T> out, T mean, T stddev) {
        for (auto& v : out) v = static_cast<T>(mean + stddev * static_cast<T>(normal()));
    }

    // Fisher-Yates.
    void shuffle(std::vector<std::size_t>& idx);

  private:
    std::uint64_t s_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
    std::uint64_t seed_value_;
};

std::uint64_t fnv1a64(std::string_view s);

}  // namespace ng
