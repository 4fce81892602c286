// SPDX-License-Identifier: Apache-2.0
#include "neurogen/refcorpus.hpp"

#include <cmath>

#include "neurogen/schedule.hpp"
#include "neurogen/tape.hpp"

namespace ng {

template <typename T>
ReferenceModel<T>::ReferenceModel(const ArchSpec& arch, Rng& init_rng) : arch_(&arch) {
    params_.reserve(arch.layout.segments.size());
    for (const auto& seg : arch.layout.segments) {
        auto t = Tensor<T>::zeros(seg.shape);
        if (seg.role != ParamRole::bias) {
            // fan_in-scaled uniform, the usual default for conv/linear layers
            const std::size_t fan_in = seg.length / seg.shape[0];
            const T bound = T(1) / std::sqrt(static_cast<T>(fan_in));
            for (auto& v : t.mutable_data())
                v = static_cast<T>((init_rng.uniform() * 2.0 - 1.0) * bound);
        }
        t.set_requires_grad(true);
        params_.push_back(std::move(t));
    }
}

namespace {

// Per-layer wiring over named tensors, written independently of the
// flat-vector path in functional_forward.
template <typename T>
Tensor<T> reference_walk(const ArchSpec& arch, const std::vector<Tensor<T>>& params, Tensor<T> x,
                         const TokenBatch* tokens) {
    std::size_t p = 0;
    for (const auto& l : arch.layers) {
        switch (l.kind) {
            case LayerKind::conv2d: {
                const auto& w = params[p];
                const auto& b = params[p + 1];
                p += 2;
                x = conv2d(x, w, b, l.stride, l.pad);
                break;
            }
            case LayerKind::relu:
                x = relu(x);
                break;
            case LayerKind::maxpool2d:
                x = maxpool2d(x, l.pool_k);
                break;
            case LayerKind::global_avg_pool:
                x = global_avg_pool(x);
                break;
            case LayerKind::linear: {
                if (x.rank() > 2) x = reshape(x, {x.dim(0), x.numel() / x.dim(0)});
                x = add(matmul(x, params[p], false, true), params[p + 1]);
                p += 2;
                break;
            }
            case LayerKind::embedding_ref:
                break;  // applied by the caller
            case LayerKind::mean_pool_tokens: {
                const std::size_t batch = x.dim(0), len = x.dim(1), d = x.dim(2);
                std::vector<T> mask(batch * len * d, T(0));
                std::vector<T> inv(batch * d);
                for (std::size_t b = 0; b < batch; ++b) {
                    const auto n = static_cast<std::size_t>(tokens->lengths[b]);
                    for (std::size_t t = 0; t < n; ++t)
                        std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>((b * len + t) * d), d, T(1));
                    std::fill_n(inv.begin() + static_cast<std::ptrdiff_t>(b * d), d, T(1) / static_cast<T>(n));
                }
                x = mul(x, Tensor<T>::from_data({batch, len, d}, std::move(mask)));
                x = sum_reduce(x, 1);
                x = mul(x, Tensor<T>::from_data({batch, d}, std::move(inv)));
                break;
            }
            case LayerKind::rnn_vanilla: {
                const std::size_t batch = x.dim(0), len = x.dim(1), d = x.dim(2);
                const auto& w_in = params[p];
                const auto& w_rec = params[p + 1];
                const auto& bias = params[p + 2];
                p += 3;
                Tensor<T> h = Tensor<T>::zeros({batch, l.hidden});
                std::vector<Tensor<T>> steps;
                steps.reserve(len);
                for (std::size_t t = 0; t < len; ++t) {
                    auto x_t = reshape(slice_view(x, {0, t, 0}, {batch, 1, d}), {batch, d});
                    h = tanh(add(add(matmul(x_t, w_in, false, true), matmul(h, w_rec, false, true)), bias));
                    steps.push_back(reshape(h, {batch, 1, l.hidden}));
                }
                x = len == 1 ? steps[0] : concat(steps, 1);
                break;
            }
            case LayerKind::take_last_hidden: {
                const std::size_t batch = x.dim(0), len = x.dim(1), hidden = x.dim(2);
                std::vector<T> mask(batch * len * hidden, T(0));
                for (std::size_t b = 0; b < batch; ++b) {
                    const auto last = static_cast<std::size_t>(tokens->lengths[b] - 1);
                    std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>((b * len + last) * hidden),
                                hidden, T(1));
                }
                x = mul(x, Tensor<T>::from_data({batch, len, hidden}, std::move(mask)));
                x = sum_reduce(x, 1);
                break;
            }
        }
    }
    return x;
}

}  // namespace

template <typename T>
Tensor<T> ReferenceModel<T>::forward(const Tensor<T>& batch) const {
    return reference_walk(*arch_, params_, batch, nullptr);
}

template <typename T>
Tensor<T> ReferenceModel<T>::forward(const TokenBatch& batch, const Tensor<T>& embed_table) const {
    auto x = embedding_lookup(embed_table, batch.ids);
    x = reshape(x, {batch.batch, batch.len, arch_->embed_dim});
    return reference_walk(*arch_, params_, x, &batch);
}

template <typename T>
FlatParams<T> ReferenceModel<T>::flat() const {
    return flatten(params_, arch_->layout, arch_->hash);
}

template <typename T>
double ReferenceModel<T>::accuracy(const DatasetHandle& data, const Tensor<T>* embed_table,
                                   std::size_t chunk) const {
    std::size_t correct = 0;
    const auto rows = all_rows(data);
    for (std::size_t begin = 0; begin < rows.size(); begin += chunk) {
        const std::size_t end = std::min(rows.size(), begin + chunk);
        const std::span<const std::size_t> part(rows.data() + begin, end - begin);
        Tensor<T> logits = arch_->text_input ? forward(token_batch(data, part), *embed_table)
                                             : forward(dense_batch<T>(data, part));
        const auto pred = predict(logits);
        for (std::size_t i = 0; i < part.size(); ++i)
            if (pred[i] == data.labels[part[i]]) ++correct;
    }
    return data.size() == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(data.size());
}

std::pair<FlatParams<float>, CheckpointMeta> train_reference(const ArchSpec& arch, const Dataset& data,
                                                             std::uint64_t seed, const TrainConfig& config,
                                                             const Tensor<float>* embed_table) {
    if (arch.text_input && !embed_table)
        throw ConfigError("train_reference: text arch needs the frozen embedding table");

    Rng root(seed);
    Rng init_rng = root.stream("init");
    Rng order_rng = root.stream("order");

    ReferenceModel<float> model(arch, init_rng);
    const auto& train = data.train;

    auto idx = all_rows(train);
    double epoch_loss = 0.0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto lr = static_cast<float>(lr_at(config.lr, config.halve_every, epoch));
        order_rng.shuffle(idx);
        epoch_loss = 0.0;
        std::size_t steps = 0;
        for (std::size_t begin = 0; begin < idx.size(); begin += config.batch_size) {
            const std::size_t end = std::min(idx.size(), begin + config.batch_size);
            const std::span<const std::size_t> part(idx.data() + begin, end - begin);
            auto labels = label_batch(train, part);

            GradTape<float> tape;
            float loss_value;
            {
                TapeScope<float> scope(tape);
                Tensor<float> logits = arch.text_input
                                           ? model.forward(token_batch(train, part), *embed_table)
                                           : model.forward(dense_batch<float>(train, part));
                auto loss = cross_entropy(logits, labels);
                loss_value = loss.item();
                if (!std::isfinite(loss_value))
                    throw TrainingDivergence("train_reference: non-finite loss at epoch " +
                                             std::to_string(epoch) + " (seed " + std::to_string(seed) + ")");
                tape.backward(loss);
            }
            for (auto& p : model.parameters()) {
                const auto g = tape.grad(p);
                auto vals = p.mutable_data();
                for (std::size_t i = 0; i < vals.size(); ++i) vals[i] -= lr * g[i];
            }
            epoch_loss += loss_value;
            ++steps;
        }
        epoch_loss /= static_cast<double>(steps);
    }

    CheckpointMeta meta;
    meta.seed = seed;
    meta.epochs = config.epochs;
    meta.final_train_loss = epoch_loss;
    meta.test_accuracy = model.accuracy(data.test, embed_table);
    meta.dataset_id = train.id;
    return {model.flat(), meta};
}

CheckpointCorpus build_corpus(const ArchSpec& arch, const Dataset& data, std::size_t n,
                              std::uint64_t base_seed, const TrainConfig& config,
                              const Tensor<float>* embed_table) {
    if (n < 1) throw ConfigError("build_corpus: N must be >= 1");
    CheckpointCorpus corpus;
    corpus.arch_hash = arch.hash;
    corpus.layout = arch.layout;
    corpus.entries.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        try {
            auto [params, meta] = train_reference(arch, data, base_seed + i, config, embed_table);
            corpus.entries.push_back({std::move(params), std::move(meta)});
        } catch (const TrainingDivergence& e) {
            throw TrainingDivergence(std::string(e.what()) + " [corpus seed " +
                                     std::to_string(base_seed + i) + "]");
        }
    }
    return corpus;
}

std::pair<std::vector<double>, std::vector<double>> corpus_stats(const CheckpointCorpus& corpus) {
    const std::size_t len = corpus.layout.total_len;
    const auto n = static_cast<double>(corpus.count());
    std::vector<double> mean(len, 0.0), var(len, 0.0);
    for (const auto& entry : corpus.entries) {
        auto vals = entry.params.values.data();
        for (std::size_t i = 0; i < len; ++i) mean[i] += vals[i];
    }
    for (auto& m : mean) m /= n;
    for (const auto& entry : corpus.entries) {
        auto vals = entry.params.values.data();
        for (std::size_t i = 0; i < len; ++i) {
            const double d = vals[i] - mean[i];
            var[i] += d * d;
        }
    }
    for (auto& v : var) v /= n;
    return {std::move(mean), std::move(var)};
}

template class ReferenceModel<float>;
template class ReferenceModel<double>;

}  // namespace ng
