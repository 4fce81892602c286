// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>

#include "neurogen/archspec.hpp"
#include "neurogen/dataio.hpp"
#include "neurogen/functional.hpp"

namespace ng {

struct TrainConfig {
    std::size_t epochs = 30;
    double lr = 1e-3;
    std::size_t halve_every = 10;  // 0 keeps lr constant
    std::size_t batch_size = 64;
};

struct CheckpointMeta {
    std::uint64_t seed = 0;
    std::size_t epochs = 0;
    double final_train_loss = 0.0;
    double test_accuracy = 0.0;
    std::string dataset_id;
};

struct CorpusEntry {
    FlatParams<float> params;
    CheckpointMeta meta;
};

struct CheckpointCorpus {
    std::uint64_t arch_hash = 0;
    ParamLayout layout;
    std::vector<CorpusEntry> entries;

    std::size_t count() const { return entries.size(); }
};

// Stateful per-layer network used by the classical trainer and as the
// reference forward that functional_forward must reproduce.  Parameters are
// ordinary leaves in layout order; flat() packs them bit-exactly.
template <typename T>
class ReferenceModel {
  public:
    ReferenceModel(const ArchSpec& arch, Rng& init_rng);

    Tensor<T> forward(const Tensor<T>& batch) const;
    Tensor<T> forward(const TokenBatch& batch, const Tensor<T>& embed_table) const;

    std::vector<Tensor<T>>& parameters() { return params_; }
    const ArchSpec& arch() const { return *arch_; }
    FlatParams<T> flat() const;
    double accuracy(const DatasetHandle& data, const Tensor<T>* embed_table, std::size_t chunk = 512) const;

  private:
    const ArchSpec* arch_;
    std::vector<Tensor<T>> params_;
};

// Classical SGD training on the full train split; deterministic per seed.
std::pair<FlatParams<float>, CheckpointMeta> train_reference(const ArchSpec& arch, const Dataset& data,
                                                             std::uint64_t seed, const TrainConfig& config,
                                                             const Tensor<float>* embed_table = nullptr);

// N independent runs with seeds base_seed .. base_seed+N-1.
CheckpointCorpus build_corpus(const ArchSpec& arch, const Dataset& data, std::size_t n,
                              std::uint64_t base_seed, const TrainConfig& config,
                              const Tensor<float>* embed_table = nullptr);

// Per-coordinate mean and population variance over corpus entries.
std::pair<std::vector<double>, std::vector<double>> corpus_stats(const CheckpointCorpus& corpus);

}  // namespace ng
