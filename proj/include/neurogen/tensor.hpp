// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "neurogen/errors.hpp"

namespace ng {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s);

namespace detail {
std::uint64_t next_tensor_id();
}

// Dense row-major tensor handle.  Copying a Tensor copies the handle, not the
// buffer; tensors produced by kernels are never mutated afterwards.  A leaf
// with requires_grad participates in autodiff when an op touching it runs
// under an active GradTape.
template <typename T>
class Tensor {
    static_assert(std::is_floating_point_v<T>);

    struct Node {
        Shape shape;
        std::vector<T> values;
        bool requires_grad = false;
        std::uint64_t id = 0;
    };

  public:
    Tensor() = default;

    static Tensor zeros(Shape shape) {
        return Tensor(std::move(shape), std::vector<T>{}, /*fill*/ true, T(0));
    }
    static Tensor full(Shape shape, T value) {
        return Tensor(std::move(shape), std::vector<T>{}, true, value);
    }
    static Tensor from_data(Shape shape, std::vector<T> values) {
        if (shape_numel(shape) != values.size())
            throw ShapeError("tensor: " + shape_str(shape) + " cannot hold " +
                             std::to_string(values.size()) + " values");
        return Tensor(std::move(shape), std::move(values), false, T(0));
    }
    static Tensor scalar(T value) { return from_data({}, {value}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->values.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    bool is_scalar() const { return node_->values.size() == 1 && node_->shape.empty(); }

    std::span<const T> data() const { return node_->values; }
    // Leaf mutation only; never call on a tensor already consumed by a tape.
    std::span<T> mutable_data() { return node_->values; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        node_->requires_grad = v;
        return *this;
    }

    std::uint64_t id() const { return node_->id; }

    T item() const {
        if (numel() != 1) throw ShapeError("item(): tensor has " + std::to_string(numel()) + " values");
        return node_->values[0];
    }

    // Deep copy with a fresh identity.
    Tensor clone() const {
        Tensor t = from_data(node_->shape, node_->values);
        t.node_->requires_grad = node_->requires_grad;
        return t;
    }

    // Same buffer reinterpreted; used by kernels only.
    friend bool same_node(const Tensor& a, const Tensor& b) { return a.node_ == b.node_; }

  private:
    Tensor(Shape shape, std::vector<T> values, bool fill, T fill_value) {
        node_ = std::make_shared<Node>();
        node_->shape = std::move(shape);
        if (fill)
            node_->values.assign(shape_numel(node_->shape), fill_value);
        else
            node_->values = std::move(values);
        node_->id = detail::next_tensor_id();
    }

    std::shared_ptr<Node> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename T, typename U>
Tensor<U> cast(const Tensor<T>& t) {
    std::vector<U> v(t.numel());
    auto src = t.data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<U>(src[i]);
    auto out = Tensor<U>::from_data(t.shape(), std::move(v));
    out.set_requires_grad(t.requires_grad());
    return out;
}

}  // namespace ng
