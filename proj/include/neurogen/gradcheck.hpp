// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "neurogen/tape.hpp"
#include "neurogen/tensor.hpp"

namespace ng {

// Central-difference gradient verification, double precision only.  fn must
// evaluate a scalar at the given point; it is re-run under a fresh tape for
// the analytic pass and twice per probed coordinate for the numeric one.
// Returns max over coordinates of |analytic - numeric| / max(1, |analytic|).
//
// coords selects which coordinates to probe; empty means all of them.
inline double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& fn,
                         const Tensor<double>& point, double epsilon,
                         std::vector<std::size_t> coords = {}) {
    Tensor<double> x = point.clone();
    x.set_requires_grad(true);

    GradTape<double> tape;
    std::vector<double> analytic;
    {
        TapeScope<double> scope(tape);
        Tensor<double> loss = fn(x);
        if (loss.numel() != 1) throw ShapeError("grad_check: fn output must be scalar");
        tape.backward(loss);
        analytic = tape.grad(x);
    }

    if (coords.empty()) {
        coords.resize(x.numel());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    }

    double worst = 0.0;
    for (std::size_t c : coords) {
        Tensor<double> xp = x.clone();
        xp.set_requires_grad(false);
        const double orig = xp.data()[c];
        xp.mutable_data()[c] = orig + epsilon;
        const double fp = fn(xp).item();
        xp.mutable_data()[c] = orig - epsilon;
        const double fm = fn(xp).item();
        const double numeric = (fp - fm) / (2.0 * epsilon);
        const double err = std::abs(analytic[c] - numeric) / std::max(1.0, std::abs(analytic[c]));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace ng
