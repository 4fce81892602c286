// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "neurogen/archspec.hpp"
#include "neurogen/dataio.hpp"
#include "neurogen/kernels.hpp"

namespace ng {

// Frozen Gaussian N(0, 1/dim) embedding table, derived from the experiment
// seed so classical baselines and generated models share it verbatim.
template <typename T>
Tensor<T> make_frozen_table(std::size_t vocab, std::size_t dim, std::uint64_t seed);

// Executes arch with externally supplied flat weights.  Differentiable with
// respect to flat.values; frozen embedding tables receive no gradient.
template <typename T>
Tensor<T> functional_forward(const ArchSpec& arch, const FlatParams<T>& flat, const Tensor<T>& batch);

template <typename T>
Tensor<T> functional_forward(const ArchSpec& arch, const FlatParams<T>& flat, const TokenBatch& batch,
                             const Tensor<T>& embed_table);

// Argmax with ties resolved to the lowest class index.
template <typename T>
std::vector<std::int64_t> predict(const Tensor<T>& logits);

// Test accuracy of flat weights over a whole split, evaluated in chunks.
template <typename T>
double evaluate_accuracy(const ArchSpec& arch, const FlatParams<T>& flat, const DatasetHandle& data,
                         const Tensor<T>* embed_table = nullptr, std::size_t chunk = 512);

}  // namespace ng
