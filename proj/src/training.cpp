// SPDX-License-Identifier: Apache-2.0
#include "neurogen/training.hpp"

#include <cstdio>
#include <fstream>

#include "neurogen/tape.hpp"

namespace ng {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

template <typename T>
void sgd_step(GeneratorState<T>& gen, GradTape<T>& tape, double lr, const StageConfig& config) {
    auto update = [&](Tensor<T>& p, double rate) {
        const auto g = tape.grad(p);
        auto vals = p.mutable_data();
        const T step = static_cast<T>(rate);
        for (std::size_t i = 0; i < vals.size(); ++i) vals[i] -= step * g[i];
    };
    update(gen.special_tokens, lr * config.lr_scale_p);
    for (auto& blk : gen.blocks) {
        update(blk.lora_q_a, lr * config.lr_scale_lora);
        update(blk.lora_q_b, lr * config.lr_scale_lora);
        update(blk.lora_v_a, lr * config.lr_scale_lora);
        update(blk.lora_v_b, lr * config.lr_scale_lora);
    }
    update(gen.proj_w1, lr);
    update(gen.proj_b1, lr);
    update(gen.proj_w2, lr);
    update(gen.proj_b2, lr);
    if (gen.patch_dim > 0) {
        update(gen.patch_w, lr);
        update(gen.patch_b, lr);
    }
}

// Frozen snapshot of generated weights for evaluation.
template <typename T>
FlatParams<T> detached(const FlatParams<T>& w) {
    FlatParams<T> out{w.values.clone(), w.layout, w.arch_hash};
    out.values.set_requires_grad(false);
    return out;
}

template <typename T>
Tensor<T> stage2_context(GeneratorState<T>& gen, const ArchSpec& arch, const DatasetHandle& dsub) {
    const auto rows = all_rows(dsub);
    if (arch.text_input || dsub.modality == Modality::text)
        return encode_context(gen, token_batch(dsub, rows));
    return encode_context(gen, dense_batch<T>(dsub, rows));
}

}  // namespace

std::string LossCurve::to_csv() const {
    std::string out = "epoch,loss,test_acc,lr\n";
    for (const auto& r : records) {
        out += std::to_string(r.epoch);
        out += ",";
        out += fmt_double(r.loss);
        out += ",";
        out += fmt_double(r.test_acc);
        out += ",";
        out += fmt_double(r.lr);
        out += "\n";
    }
    return out;
}

void write_curve_csv(const std::string& path, const LossCurve& curve) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError(path + ": cannot open for writing");
    out << curve.to_csv();
    if (!out) throw IoError(path + ": write failed");
}

template <typename T>
FlatParams<T> soft_clip(const FlatParams<T>& w, double alpha) {
    if (alpha <= 0) throw ConfigError("soft_clip: alpha must be > 0");
    const auto a = static_cast<T>(alpha);
    auto scaled = mul(w.values, Tensor<T>::full(w.values.shape(), T(1) / a));
    auto clipped = mul(tanh(scaled), Tensor<T>::full(w.values.shape(), a));
    return {clipped, w.layout, w.arch_hash};
}

template <typename T>
LossCurve stage1_train(GeneratorState<T>& gen, const CheckpointCorpus& corpus,
                       const StageConfig& config) {
    if (corpus.arch_hash != gen.arch_hash)
        throw ArtifactMismatch("stage1: corpus arch hash " + std::to_string(corpus.arch_hash) +
                               " does not match generator target " + std::to_string(gen.arch_hash));
    if (corpus.count() == 0) throw ConfigError("stage1: empty corpus");

    const Instruction instruction = Instruction::make(std::string(kStage1Instruction));
    std::vector<Tensor<T>> targets;
    targets.reserve(corpus.count());
    for (const auto& entry : corpus.entries) targets.push_back(cast<float, T>(entry.params.values));

    const auto inv_n = static_cast<T>(1.0 / static_cast<double>(corpus.count()));
    LossCurve curve;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_at(config.lr, config.halve_every, epoch);
        GradTape<T> tape;
        double loss_value;
        {
            TapeScope<T> scope(tape);
            auto generated = generate(gen, instruction, std::optional<Tensor<T>>{});
            Tensor<T> loss = mse(generated.values, targets[0]);
            for (std::size_t i = 1; i < targets.size(); ++i)
                loss = add(loss, mse(generated.values, targets[i]));
            loss = mul(loss, Tensor<T>::full(loss.shape(), inv_n));
            loss_value = static_cast<double>(loss.item());
            if (!std::isfinite(loss_value))
                throw TrainingDivergence("stage1: non-finite loss at epoch " + std::to_string(epoch));
            tape.backward(loss);
        }
        sgd_step(gen, tape, lr, config);
        curve.records.push_back({epoch, loss_value, std::nan(""), lr});
    }
    return curve;
}

template <typename T>
LossCurve stage2_train(GeneratorState<T>& gen, const Dataset& data, const Instruction& instruction,
                       const ArchSpec& arch, const StageConfig& config, const SoftClipConfig& softclip,
                       bool stage1_done, const Tensor<T>* embed_table) {
    if (arch.hash != gen.arch_hash)
        throw ArtifactMismatch("stage2: generator targets arch hash " + std::to_string(gen.arch_hash) +
                               ", got '" + arch.name + "'");
    if (arch.text_input && !embed_table)
        throw ConfigError("stage2: text target needs the frozen embedding table");
    if (config.subset_m > data.train.size())
        throw ConfigError("stage2: m=" + std::to_string(config.subset_m) + " exceeds train size " +
                          std::to_string(data.train.size()));

    Rng root(config.seed);
    Rng order_rng = root.stream("stage2-order");
    Rng eval_rng = root.stream("stage2-evalctx");

    // Fixed held-out context batch keeps the accuracy curve deterministic.
    const DatasetHandle eval_ctx = sample_subset(data.train, config.subset_m, eval_rng);

    const std::size_t steps_per_epoch =
        (data.train.size() + config.subset_m - 1) / config.subset_m;

    LossCurve curve;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_at(config.lr, config.halve_every, epoch);
        double epoch_loss = 0.0;
        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            const DatasetHandle dsub = sample_subset(data.train, config.subset_m, order_rng);
            const auto rows = all_rows(dsub);
            const auto labels = label_batch(dsub, rows);

            GradTape<T> tape;
            double loss_value;
            {
                TapeScope<T> scope(tape);
                auto context = stage2_context(gen, arch, dsub);
                auto w = generate(gen, instruction, std::optional<Tensor<T>>(context));
                if (softclip.enabled) w = soft_clip(w, softclip.alpha);
                Tensor<T> logits = arch.text_input
                                       ? functional_forward(arch, w, token_batch(dsub, rows), *embed_table)
                                       : functional_forward(arch, w, dense_batch<T>(dsub, rows));
                auto loss = cross_entropy(logits, labels);
                loss_value = static_cast<double>(loss.item());
                if (!std::isfinite(loss_value)) {
                    if (!stage1_done && !softclip.enabled)
                        throw UnboundedLogits(
                            "stage2: non-finite task loss at epoch " + std::to_string(epoch) +
                            " step " + std::to_string(step) +
                            "; phase-2-only generation without soft clip lost the parameter bound");
                    throw TrainingDivergence("stage2: non-finite loss at epoch " +
                                             std::to_string(epoch) + " step " + std::to_string(step));
                }
                tape.backward(loss);
            }
            sgd_step(gen, tape, lr, config);
            epoch_loss += loss_value;
        }
        epoch_loss /= static_cast<double>(steps_per_epoch);

        auto eval_context = stage2_context(gen, arch, eval_ctx);
        auto w_eval = detached(generate(gen, instruction, std::optional<Tensor<T>>(eval_context)));
        if (softclip.enabled) w_eval = detached(soft_clip(w_eval, softclip.alpha));
        const double acc = evaluate_accuracy(arch, w_eval, data.test, embed_table);
        curve.records.push_back({epoch, epoch_loss, acc, lr});
    }
    return curve;
}

template <typename T>
std::pair<GeneratorState<T>, LossCurve> adapt_architecture(const GeneratorState<T>& gen,
                                                           const ArchSpec& arch_small,
                                                           const Dataset& data,
                                                           const Instruction& instruction,
                                                           const StageConfig& config,
                                                           const Tensor<T>* embed_table) {
    GeneratorState<T> adapted = adapt_generator(gen, arch_small);
    LossCurve curve = stage2_train(adapted, data, instruction, arch_small, config, SoftClipConfig{},
                                   /*stage1_done=*/true, embed_table);
    return {std::move(adapted), std::move(curve)};
}

template FlatParams<float> soft_clip(const FlatParams<float>&, double);
template FlatParams<double> soft_clip(const FlatParams<double>&, double);
template LossCurve stage1_train(GeneratorState<float>&, const CheckpointCorpus&, const StageConfig&);
template LossCurve stage1_train(GeneratorState<double>&, const CheckpointCorpus&, const StageConfig&);
template LossCurve stage2_train(GeneratorState<float>&, const Dataset&, const Instruction&,
                                const ArchSpec&, const StageConfig&, const SoftClipConfig&, bool,
                                const Tensor<float>*);
template LossCurve stage2_train(GeneratorState<double>&, const Dataset&, const Instruction&,
                                const ArchSpec&, const StageConfig&, const SoftClipConfig&, bool,
                                const Tensor<double>*);
template std::pair<GeneratorState<float>, LossCurve> adapt_architecture(
    const GeneratorState<float>&, const ArchSpec&, const Dataset&, const Instruction&,
    const StageConfig&, const Tensor<float>*);
template std::pair<GeneratorState<double>, LossCurve> adapt_architecture(
    const GeneratorState<double>&, const ArchSpec&, const Dataset&, const Instruction&,
    const StageConfig&, const Tensor<double>*);

}  // namespace ng
