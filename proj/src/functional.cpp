// SPDX-License-Identifier: Apache-2.0
#include "neurogen/functional.hpp"

#include <algorithm>
#include <cmath>

namespace ng {

namespace {

template <typename T>
void check_match(const ArchSpec& arch, const FlatParams<T>& flat) {
    if (flat.arch_hash != arch.hash)
        throw ArtifactMismatch("weights built for arch hash " + std::to_string(flat.arch_hash) +
                               ", forward requested for '" + arch.name + "' (hash " +
                               std::to_string(arch.hash) + ")");
    if (flat.values.numel() != arch.layout.total_len)
        throw ArtifactMismatch("weight vector length " + std::to_string(flat.values.numel()) +
                               " does not match layout total " + std::to_string(arch.layout.total_len));
}

// Shared layer walk once the input is a dense tensor ([B,C,H,W] or [B,D]) or
// an embedded token sequence [B,L,d].
template <typename T>
Tensor<T> run_layers(const ArchSpec& arch, const std::vector<Tensor<T>>& params, Tensor<T> x,
                     const TokenBatch* tokens) {
    std::size_t p = 0;
    for (std::size_t li = 0; li < arch.layers.size(); ++li) {
        const auto& l = arch.layers[li];
        switch (l.kind) {
            case LayerKind::conv2d:
                x = conv2d(x, params[p], params[p + 1], l.stride, l.pad);
                p += 2;
                break;
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
                // Consumed before the walk; frozen tables carry no segment.
                break;
            case LayerKind::mean_pool_tokens: {
                const std::size_t batch = x.dim(0), len = x.dim(1), d = x.dim(2);
                // Pad positions are masked out of the mean.
                std::vector<T> mask(batch * len * d, T(0));
                std::vector<T> inv(batch * d);
                for (std::size_t b = 0; b < batch; ++b) {
                    const auto n = static_cast<std::size_t>(tokens->lengths[b]);
                    for (std::size_t t = 0; t < n; ++t)
                        std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>((b * len + t) * d), d, T(1));
                    std::fill_n(inv.begin() + static_cast<std::ptrdiff_t>(b * d), d,
                                T(1) / static_cast<T>(n));
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
                const std::size_t hidden = l.hidden;
                Tensor<T> h = Tensor<T>::zeros({batch, hidden});
                std::vector<Tensor<T>> steps;
                steps.reserve(len);
                for (std::size_t t = 0; t < len; ++t) {
                    auto x_t = reshape(slice_view(x, {0, t, 0}, {batch, 1, d}), {batch, d});
                    h = tanh(add(add(matmul(x_t, w_in, false, true), matmul(h, w_rec, false, true)), bias));
                    steps.push_back(reshape(h, {batch, 1, hidden}));
                }
                x = len == 1 ? steps[0] : concat(steps, 1);
                break;
            }
            case LayerKind::take_last_hidden: {
                const std::size_t batch = x.dim(0), len = x.dim(1), hidden = x.dim(2);
                // Select h at the last real token via an indicator mask.
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
Tensor<T> make_frozen_table(std::size_t vocab, std::size_t dim, std::uint64_t seed) {
    auto table = Tensor<T>::zeros({vocab, dim});
    Rng rng = Rng(seed).stream("frozen-embed");
    rng.fill_normal<T>(table.mutable_data(), T(0), T(1) / std::sqrt(static_cast<T>(dim)));
    return table;  // requires_grad stays false
}

template <typename T>
Tensor<T> functional_forward(const ArchSpec& arch, const FlatParams<T>& flat, const Tensor<T>& batch) {
    check_match(arch, flat);
    if (arch.text_input)
        throw ShapeError("arch '" + arch.name + "' takes token input, dense batch given");
    Shape expect{batch.dim(0)};
    expect.insert(expect.end(), arch.input_shape.begin(), arch.input_shape.end());
    if (batch.shape() != expect)
        throw ShapeError("arch '" + arch.name + "': batch " + shape_str(batch.shape()) +
                         " does not match input shape " + shape_str(arch.input_shape));
    return run_layers(arch, slice(flat), batch, nullptr);
}

template <typename T>
Tensor<T> functional_forward(const ArchSpec& arch, const FlatParams<T>& flat, const TokenBatch& batch,
                             const Tensor<T>& embed_table) {
    check_match(arch, flat);
    if (!arch.text_input)
        throw ShapeError("arch '" + arch.name + "' takes dense input, token batch given");
    const auto& emb = arch.layers.front();
    if (embed_table.shape() != Shape{emb.vocab, emb.embed_dim})
        throw ShapeError("embed table " + shape_str(embed_table.shape()) + " does not match " +
                         shape_str({emb.vocab, emb.embed_dim}));
    if (batch.len != arch.input_shape[0])
        throw ShapeError("token batch length " + std::to_string(batch.len) + " != arch sequence " +
                         std::to_string(arch.input_shape[0]));
    auto x = embedding_lookup(embed_table, batch.ids);
    x = reshape(x, {batch.batch, batch.len, emb.embed_dim});
    return run_layers(arch, slice(flat), x, &batch);
}

template <typename T>
std::vector<std::int64_t> predict(const Tensor<T>& logits) {
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    std::vector<std::int64_t> out(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        const T* row = logits.data().data() + b * classes;
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c)
            if (row[c] > row[best]) best = c;
        out[b] = static_cast<std::int64_t>(best);
    }
    return out;
}

template <typename T>
double evaluate_accuracy(const ArchSpec& arch, const FlatParams<T>& flat, const DatasetHandle& data,
                         const Tensor<T>* embed_table, std::size_t chunk) {
    FlatParams<T> frozen{flat.values.clone(), flat.layout, flat.arch_hash};
    frozen.values.set_requires_grad(false);
    std::size_t correct = 0;
    const auto rows = all_rows(data);
    for (std::size_t begin = 0; begin < rows.size(); begin += chunk) {
        const std::size_t end = std::min(rows.size(), begin + chunk);
        const std::span<const std::size_t> part(rows.data() + begin, end - begin);
        Tensor<T> logits;
        if (arch.text_input) {
            if (!embed_table) throw ShapeError("evaluate_accuracy: text arch needs an embedding table");
            logits = functional_forward(arch, frozen, token_batch(data, part), *embed_table);
        } else {
            logits = functional_forward(arch, frozen, dense_batch<T>(data, part));
        }
        const auto pred = predict(logits);
        for (std::size_t i = 0; i < part.size(); ++i)
            if (pred[i] == data.labels[part[i]]) ++correct;
    }
    return data.size() == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(data.size());
}

template Tensor<float> make_frozen_table<float>(std::size_t, std::size_t, std::uint64_t);
template Tensor<double> make_frozen_table<double>(std::size_t, std::size_t, std::uint64_t);
template Tensor<float> functional_forward(const ArchSpec&, const FlatParams<float>&, const Tensor<float>&);
template Tensor<double> functional_forward(const ArchSpec&, const FlatParams<double>&, const Tensor<double>&);
template Tensor<float> functional_forward(const ArchSpec&, const FlatParams<float>&, const TokenBatch&,
                                          const Tensor<float>&);
template Tensor<double> functional_forward(const ArchSpec&, const FlatParams<double>&, const TokenBatch&,
                                           const Tensor<double>&);
template std::vector<std::int64_t> predict(const Tensor<float>&);
template std::vector<std::int64_t> predict(const Tensor<double>&);
template double evaluate_accuracy(const ArchSpec&, const FlatParams<float>&, const DatasetHandle&,
                                  const Tensor<float>*, std::size_t);
template double evaluate_accuracy(const ArchSpec&, const FlatParams<double>&, const DatasetHandle&,
                                  const Tensor<double>*, std::size_t);

}  // namespace ng
