// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <unordered_map>
#include <vector>

#include "neurogen/kernels.hpp"
#include "neurogen/tensor.hpp"

namespace ng {

template <typename T>
struct TapeOp {
    Kernel kind;
    KernelAttrs attrs;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    std::vector<std::vector<T>> saved;  // forward intermediates reused by the vjp
};

template <typename T>
using GradMap = std::unordered_map<std::uint64_t, std::vector<T>>;

// Records ops in execution order; backward() replays them in reverse and
// accumulates vector-Jacobian products.  A tape and its tensors belong to one
// worker; it is single-use.
template <typename T>
class GradTape {
  public:
    void record(TapeOp<T> op) { ops_.push_back(std::move(op)); }

    // loss must be a scalar produced under this tape.  Populates the gradient
    // map; throws if called twice.
    const GradMap<T>& backward(const Tensor<T>& loss);

    // Gradient of a requires_grad tensor; exact zeros when the loss never
    // reached it.
    std::vector<T> grad(const Tensor<T>& t) const {
        auto it = grads_.find(t.id());
        if (it != grads_.end()) return it->second;
        return std::vector<T>(t.numel(), T(0));
    }

    const GradMap<T>& grads() const { return grads_; }
    std::size_t num_ops() const { return ops_.size(); }
    bool consumed() const { return consumed_; }

  private:
    std::vector<TapeOp<T>> ops_;
    GradMap<T> grads_;
    bool consumed_ = false;
};

template <typename T>
GradTape<T>* active_tape();

// Installs a tape as the active one for the current thread.
template <typename T>
class TapeScope {
  public:
    explicit TapeScope(GradTape<T>& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    GradTape<T>* prev_;
};

template <typename T>
const GradMap<T>& backward(const Tensor<T>& loss, GradTape<T>& tape) {
    return tape.backward(loss);
}

}  // namespace ng
