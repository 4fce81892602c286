// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>

#include "neurogen/generator.hpp"
#include "neurogen/refcorpus.hpp"
#include "neurogen/schedule.hpp"

namespace ng {

struct StageConfig {
    std::size_t epochs = 30;       // stage 2 defaults to 20 at the config layer
    double lr = 1e-3;
    std::size_t halve_every = 10;  // 0 keeps lr constant
    std::size_t subset_m = 32;     // stage-2 D_sub size
    std::uint64_t seed = 0;
    // Static per-group rate scaling (still plain SGD).  The special rows sit
    // under several layernorms, which shrinks their gradients by orders of
    // magnitude relative to the head's.
    double lr_scale_p = 1.0;
    double lr_scale_lora = 1.0;
};

struct SoftClipConfig {
    bool enabled = false;
    double alpha = 0.5;
};

struct EpochRecord {
    std::size_t epoch;
    double loss;
    double test_acc;  // NaN when the stage does not evaluate
    double lr;
};

struct LossCurve {
    std::vector<EpochRecord> records;
    std::string to_csv() const;  // header "epoch,loss,test_acc,lr"
};

void write_curve_csv(const std::string& path, const LossCurve& curve);

// Elementwise w' = alpha * tanh(w / alpha); bounded by alpha, near-identity
// for |w| << alpha, differentiable.
template <typename T>
FlatParams<T> soft_clip(const FlatParams<T>& w, double alpha);

// Stage 1: per epoch, generate w_g from the generic instruction with no
// context and pull it toward the corpus under mean MSE.
template <typename T>
LossCurve stage1_train(GeneratorState<T>& gen, const CheckpointCorpus& corpus,
                       const StageConfig& config);

// Stage 2: per step, resample D_sub, encode it as context, generate w_g^t,
// optionally soft-clip, and take the task loss through functional_forward.
// Per-epoch test accuracy evaluates the single w_g^t generated from a fixed
// held-out context batch.  A non-finite loss in phase-2-only mode without
// soft clip raises UnboundedLogits.
template <typename T>
LossCurve stage2_train(GeneratorState<T>& gen, const Dataset& data, const Instruction& instruction,
                       const ArchSpec& arch, const StageConfig& config, const SoftClipConfig& softclip,
                       bool stage1_done, const Tensor<T>* embed_table = nullptr);

// Fresh projection head (and resized P) for arch_small, lora retained, then
// Stage 2 only.
template <typename T>
std::pair<GeneratorState<T>, LossCurve> adapt_architecture(const GeneratorState<T>& gen,
                                                           const ArchSpec& arch_small,
                                                           const Dataset& data,
                                                           const Instruction& instruction,
                                                           const StageConfig& config,
                                                           const Tensor<T>* embed_table = nullptr);

}  // namespace ng
