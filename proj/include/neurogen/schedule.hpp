// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>

namespace ng {

// lr = initial * 0.5^floor(epoch / halve_every); halve_every == 0 disables
// the decay.
inline double lr_at(double initial, std::size_t halve_every, std::size_t epoch) {
    if (halve_every == 0) return initial;
    return initial * std::pow(0.5, static_cast<double>(epoch / halve_every));
}

}  // namespace ng
