// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "neurogen/tensor.hpp"

namespace ng {

enum class Kernel : std::uint8_t {
    matmul,
    add,
    mul,
    relu,
    tanh,
    softmax,
    log_softmax,
    layernorm,
    embedding_lookup,
    conv2d,
    maxpool2d,
    global_avg_pool,
    mean_reduce,
    sum_reduce,
    concat,
    slice_view,
    reshape,
    scaled_dot_attention,
    cross_entropy,
    mse,
};

std::string_view kernel_name(Kernel k);
Kernel kernel_from_name(std::string_view name);  // throws ShapeError on unknown id

struct KernelAttrs {
    int stride = 1;
    int pad = 0;
    int pool_k = 2;
    int axis = -1;  // reductions: -1 reduces everything to a scalar
    bool trans_a = false;
    bool trans_b = false;
    bool causal = false;
    double eps = 1e-5;
    std::vector<std::int64_t> ids;          // embedding rows / class labels
    std::vector<std::size_t> starts;        // slice_view
    std::vector<std::size_t> sizes;         // slice_view
    Shape new_shape;                        // reshape
};

// Single kernel entry point.  Validates shapes, computes the output, and when
// an active tape exists and any input requires grad, records the op for the
// backward pass.
template <typename T>
Tensor<T> apply_kernel(Kernel kind, const std::vector<Tensor<T>>& inputs, const KernelAttrs& attrs = {});

// Named wrappers over apply_kernel.

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false, bool trans_b = false) {
    KernelAttrs at;
    at.trans_a = trans_a;
    at.trans_b = trans_b;
    return apply_kernel<T>(Kernel::matmul, {a, b}, at);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return apply_kernel<T>(Kernel::add, {a, b});
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return apply_kernel<T>(Kernel::mul, {a, b});
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return apply_kernel<T>(Kernel::relu, {x});
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
    return apply_kernel<T>(Kernel::tanh, {x});
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    return apply_kernel<T>(Kernel::softmax, {x});
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
    return apply_kernel<T>(Kernel::log_softmax, {x});
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps = 1e-5) {
    KernelAttrs at;
    at.eps = eps;
    return apply_kernel<T>(Kernel::layernorm, {x, gamma, beta}, at);
}

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::vector<std::int64_t> ids) {
    KernelAttrs at;
    at.ids = std::move(ids);
    return apply_kernel<T>(Kernel::embedding_lookup, {table}, at);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride = 1, int pad = 0) {
    KernelAttrs at;
    at.stride = stride;
    at.pad = pad;
    return apply_kernel<T>(Kernel::conv2d, {x, w, b}, at);
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int k) {
    KernelAttrs at;
    at.pool_k = k;
    return apply_kernel<T>(Kernel::maxpool2d, {x}, at);
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    return apply_kernel<T>(Kernel::global_avg_pool, {x});
}

template <typename T>
Tensor<T> mean_reduce(const Tensor<T>& x, int axis = -1) {
    KernelAttrs at;
    at.axis = axis;
    return apply_kernel<T>(Kernel::mean_reduce, {x}, at);
}

template <typename T>
Tensor<T> sum_reduce(const Tensor<T>& x, int axis = -1) {
    KernelAttrs at;
    at.axis = axis;
    return apply_kernel<T>(Kernel::sum_reduce, {x}, at);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    KernelAttrs at;
    at.axis = axis;
    return apply_kernel<T>(Kernel::concat, parts, at);
}

template <typename T>
Tensor<T> slice_view(const Tensor<T>& x, std::vector<std::size_t> starts, std::vector<std::size_t> sizes) {
    KernelAttrs at;
    at.starts = std::move(starts);
    at.sizes = std::move(sizes);
    return apply_kernel<T>(Kernel::slice_view, {x}, at);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    KernelAttrs at;
    at.new_shape = std::move(new_shape);
    return apply_kernel<T>(Kernel::reshape, {x}, at);
}

template <typename T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, bool causal) {
    KernelAttrs at;
    at.causal = causal;
    return apply_kernel<T>(Kernel::scaled_dot_attention, {q, k, v}, at);
}

// Fused log_softmax + NLL, mean over the batch.  Stable for unbounded logits.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::vector<std::int64_t> labels) {
    KernelAttrs at;
    at.ids = std::move(labels);
    return apply_kernel<T>(Kernel::cross_entropy, {logits}, at);
}

// Mean over all coordinates of the squared difference.
template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
    return apply_kernel<T>(Kernel::mse, {a, b});
}

}  // namespace ng
