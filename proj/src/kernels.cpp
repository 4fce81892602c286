// SPDX-License-Identifier: Apache-2.0
//
// Forward kernels, their vector-Jacobian products, and the recording tape.
// Everything is instantiated for float (training) and double (verification).

#include "neurogen/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "neurogen/parallel.hpp"
#include "neurogen/tape.hpp"

namespace ng {

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace detail {
std::uint64_t next_tensor_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

namespace {

constexpr std::string_view kKernelNames[] = {
    "matmul",        "add",        "mul",          "relu",
    "tanh",          "softmax",    "log_softmax",  "layernorm",
    "embedding_lookup", "conv2d",  "maxpool2d",    "global_avg_pool",
    "mean_reduce",   "sum_reduce", "concat",       "slice_view",
    "reshape",       "scaled_dot_attention",       "cross_entropy", "mse",
};

[[noreturn]] void fail(Kernel k, const std::string& msg) {
    throw ShapeError(std::string(kernel_name(k)) + ": " + msg);
}

void expect_arity(Kernel k, const auto& inputs, std::size_t n) {
    if (inputs.size() != n)
        fail(k, "expected " + std::to_string(n) + " inputs, got " + std::to_string(inputs.size()));
}

// rows x cols view of the trailing dimension.
std::pair<std::size_t, std::size_t> as_rows(const Shape& s) {
    if (s.empty()) return {1, 1};
    const std::size_t cols = s.back();
    return {shape_numel(s) / cols, cols};
}

template <typename T>
void matmul_raw(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n,
                bool trans_a, bool trans_b) {
    parallel_for(m, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            T* orow = out + i * n;
            std::fill(orow, orow + n, T(0));
            if (!trans_a && !trans_b) {
                const T* arow = a + i * k;
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const T av = arow[kk];
                    if (av == T(0)) continue;
                    const T* brow = b + kk * n;
                    for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
                }
            } else if (!trans_a && trans_b) {
                const T* arow = a + i * k;
                for (std::size_t j = 0; j < n; ++j) {
                    const T* brow = b + j * k;
                    T acc = T(0);
                    for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
                    orow[j] = acc;
                }
            } else if (trans_a && !trans_b) {
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const T av = a[kk * m + i];
                    if (av == T(0)) continue;
                    const T* brow = b + kk * n;
                    for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
                }
            } else {
                for (std::size_t j = 0; j < n; ++j) {
                    T acc = T(0);
                    for (std::size_t kk = 0; kk < k; ++kk) acc += a[kk * m + i] * b[j * k + kk];
                    orow[j] = acc;
                }
            }
        }
    });
}

template <typename T>
void softmax_rows(const T* x, T* y, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x + r * cols;
        T* yr = y + r * cols;
        T mx = xr[0];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
        T sum = T(0);
        for (std::size_t c = 0; c < cols; ++c) {
            yr[c] = std::exp(xr[c] - mx);
            sum += yr[c];
        }
        const T inv = T(1) / sum;
        for (std::size_t c = 0; c < cols; ++c) yr[c] *= inv;
    }
}

struct Conv2dDims {
    std::size_t batch, cin, h, w, cout, ks, ho, wo;
    int stride, pad;
};

template <typename T>
Conv2dDims conv2d_dims(Kernel k, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                       const KernelAttrs& attrs) {
    if (x.rank() != 4) fail(k, "input must be [B,C,H,W], got " + shape_str(x.shape()));
    if (w.rank() != 4 || w.dim(2) != w.dim(3))
        fail(k, "weight must be [O,C,k,k], got " + shape_str(w.shape()));
    if (w.dim(1) != x.dim(1))
        fail(k, "channel mismatch: input " + shape_str(x.shape()) + " weight " + shape_str(w.shape()));
    if (b.rank() != 1 || b.dim(0) != w.dim(0))
        fail(k, "bias must be [O], got " + shape_str(b.shape()));
    Conv2dDims d;
    d.batch = x.dim(0);
    d.cin = x.dim(1);
    d.h = x.dim(2);
    d.w = x.dim(3);
    d.cout = w.dim(0);
    d.ks = w.dim(2);
    d.stride = attrs.stride;
    d.pad = attrs.pad;
    if (d.stride < 1) fail(k, "stride must be >= 1");
    const std::ptrdiff_t eh = static_cast<std::ptrdiff_t>(d.h) + 2 * d.pad - static_cast<std::ptrdiff_t>(d.ks);
    const std::ptrdiff_t ew = static_cast<std::ptrdiff_t>(d.w) + 2 * d.pad - static_cast<std::ptrdiff_t>(d.ks);
    if (eh < 0 || ew < 0)
        fail(k, "kernel " + std::to_string(d.ks) + " larger than padded input " + shape_str(x.shape()));
    d.ho = static_cast<std::size_t>(eh) / d.stride + 1;
    d.wo = static_cast<std::size_t>(ew) / d.stride + 1;
    return d;
}

// Reduced shape and (outer, axis, inner) strides for axis reductions.
struct AxisDims {
    Shape out_shape;
    std::size_t outer, n, inner;
};

template <typename T>
AxisDims axis_dims(Kernel k, const Tensor<T>& x, int axis) {
    AxisDims d;
    if (axis < 0) {
        d.out_shape = {};
        d.outer = 1;
        d.n = x.numel();
        d.inner = 1;
        return d;
    }
    const auto a = static_cast<std::size_t>(axis);
    if (a >= x.rank()) fail(k, "axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
    d.outer = 1;
    d.inner = 1;
    for (std::size_t i = 0; i < a; ++i) d.outer *= x.dim(i);
    for (std::size_t i = a + 1; i < x.rank(); ++i) d.inner *= x.dim(i);
    d.n = x.dim(a);
    d.out_shape = x.shape();
    d.out_shape.erase(d.out_shape.begin() + static_cast<std::ptrdiff_t>(a));
    return d;
}

template <typename T>
Tensor<T> kernel_forward(Kernel kind, const std::vector<Tensor<T>>& in, const KernelAttrs& attrs,
                         std::vector<std::vector<T>>* saved) {
    switch (kind) {
        case Kernel::matmul: {
            expect_arity(kind, in, 2);
            const auto& a = in[0];
            const auto& b = in[1];
            if (a.rank() != 2 || b.rank() != 2)
                fail(kind, "operands must be rank 2, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
            const std::size_t m = attrs.trans_a ? a.dim(1) : a.dim(0);
            const std::size_t ka = attrs.trans_a ? a.dim(0) : a.dim(1);
            const std::size_t kb = attrs.trans_b ? b.dim(1) : b.dim(0);
            const std::size_t n = attrs.trans_b ? b.dim(0) : b.dim(1);
            if (ka != kb)
                fail(kind, "inner dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
            auto out = Tensor<T>::zeros({m, n});
            matmul_raw(a.data().data(), b.data().data(), out.mutable_data().data(), m, ka, n,
                       attrs.trans_a, attrs.trans_b);
            return out;
        }
        case Kernel::add: {
            expect_arity(kind, in, 2);
            const auto& a = in[0];
            const auto& b = in[1];
            if (a.shape() == b.shape()) {
                auto out = Tensor<T>::zeros(a.shape());
                auto* o = out.mutable_data().data();
                const auto* pa = a.data().data();
                const auto* pb = b.data().data();
                for (std::size_t i = 0; i < a.numel(); ++i) o[i] = pa[i] + pb[i];
                return out;
            }
            // Bias broadcast over leading dims only.
            if (b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.dim(0)) {
                auto out = Tensor<T>::zeros(a.shape());
                const auto [rows, cols] = as_rows(a.shape());
                auto* o = out.mutable_data().data();
                const auto* pa = a.data().data();
                const auto* pb = b.data().data();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c) o[r * cols + c] = pa[r * cols + c] + pb[c];
                return out;
            }
            fail(kind, "shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                           " are neither equal nor bias-broadcastable");
        }
        case Kernel::mul: {
            expect_arity(kind, in, 2);
            if (in[0].shape() != in[1].shape())
                fail(kind, "shapes differ: " + shape_str(in[0].shape()) + " vs " + shape_str(in[1].shape()));
            auto out = Tensor<T>::zeros(in[0].shape());
            auto* o = out.mutable_data().data();
            const auto* a = in[0].data().data();
            const auto* b = in[1].data().data();
            for (std::size_t i = 0; i < out.numel(); ++i) o[i] = a[i] * b[i];
            return out;
        }
        case Kernel::relu: {
            expect_arity(kind, in, 1);
            auto out = Tensor<T>::zeros(in[0].shape());
            auto* o = out.mutable_data().data();
            const auto* x = in[0].data().data();
            for (std::size_t i = 0; i < out.numel(); ++i) o[i] = x[i] > T(0) ? x[i] : T(0);
            return out;
        }
        case Kernel::tanh: {
            expect_arity(kind, in, 1);
            auto out = Tensor<T>::zeros(in[0].shape());
            auto* o = out.mutable_data().data();
            const auto* x = in[0].data().data();
            for (std::size_t i = 0; i < out.numel(); ++i) o[i] = std::tanh(x[i]);
            return out;
        }
        case Kernel::softmax: {
            expect_arity(kind, in, 1);
            if (in[0].rank() == 0) fail(kind, "needs at least one dimension");
            const auto [rows, cols] = as_rows(in[0].shape());
            auto out = Tensor<T>::zeros(in[0].shape());
            softmax_rows(in[0].data().data(), out.mutable_data().data(), rows, cols);
            return out;
        }
        case Kernel::log_softmax: {
            expect_arity(kind, in, 1);
            if (in[0].rank() == 0) fail(kind, "needs at least one dimension");
            const auto [rows, cols] = as_rows(in[0].shape());
            auto out = Tensor<T>::zeros(in[0].shape());
            const auto* x = in[0].data().data();
            auto* y = out.mutable_data().data();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* xr = x + r * cols;
                T* yr = y + r * cols;
                T mx = xr[0];
                for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
                T sum = T(0);
                for (std::size_t c = 0; c < cols; ++c) sum += std::exp(xr[c] - mx);
                const T lse = mx + std::log(sum);
                for (std::size_t c = 0; c < cols; ++c) yr[c] = xr[c] - lse;
            }
            return out;
        }
        case Kernel::layernorm: {
            expect_arity(kind, in, 3);
            const auto& x = in[0];
            const auto& gamma = in[1];
            const auto& beta = in[2];
            if (x.rank() == 0) fail(kind, "needs at least one dimension");
            const auto [rows, cols] = as_rows(x.shape());
            if (gamma.shape() != Shape{cols} || beta.shape() != Shape{cols})
                fail(kind, "gamma/beta must be [" + std::to_string(cols) + "], got " +
                               shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
            auto out = Tensor<T>::zeros(x.shape());
            std::vector<T> mean(rows), rstd(rows);
            const auto* px = x.data().data();
            const auto* pg = gamma.data().data();
            const auto* pb = beta.data().data();
            auto* py = out.mutable_data().data();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* xr = px + r * cols;
                T m = T(0);
                for (std::size_t c = 0; c < cols; ++c) m += xr[c];
                m /= static_cast<T>(cols);
                T var = T(0);
                for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - m) * (xr[c] - m);
                var /= static_cast<T>(cols);
                const T rs = T(1) / std::sqrt(var + static_cast<T>(attrs.eps));
                mean[r] = m;
                rstd[r] = rs;
                T* yr = py + r * cols;
                for (std::size_t c = 0; c < cols; ++c) yr[c] = (xr[c] - m) * rs * pg[c] + pb[c];
            }
            if (saved) {
                saved->push_back(std::move(mean));
                saved->push_back(std::move(rstd));
            }
            return out;
        }
        case Kernel::embedding_lookup: {
            expect_arity(kind, in, 1);
            const auto& table = in[0];
            if (table.rank() != 2) fail(kind, "table must be [V,d], got " + shape_str(table.shape()));
            const std::size_t vocab = table.dim(0);
            const std::size_t dim = table.dim(1);
            auto out = Tensor<T>::zeros({attrs.ids.size(), dim});
            auto* o = out.mutable_data().data();
            const auto* t = table.data().data();
            for (std::size_t i = 0; i < attrs.ids.size(); ++i) {
                const auto id = attrs.ids[i];
                if (id < 0 || static_cast<std::size_t>(id) >= vocab)
                    fail(kind, "id " + std::to_string(id) + " outside vocab " + std::to_string(vocab));
                std::memcpy(o + i * dim, t + static_cast<std::size_t>(id) * dim, dim * sizeof(T));
            }
            return out;
        }
        case Kernel::conv2d: {
            expect_arity(kind, in, 3);
            const auto d = conv2d_dims(kind, in[0], in[1], in[2], attrs);
            auto out = Tensor<T>::zeros({d.batch, d.cout, d.ho, d.wo});
            const auto* px = in[0].data().data();
            const auto* pw = in[1].data().data();
            const auto* pb = in[2].data().data();
            auto* po = out.mutable_data().data();
            parallel_for(d.batch * d.cout, [&](std::size_t j0, std::size_t j1) {
                for (std::size_t j = j0; j < j1; ++j) {
                    const std::size_t n = j / d.cout;
                    const std::size_t oc = j % d.cout;
                    T* oplane = po + (n * d.cout + oc) * d.ho * d.wo;
                    for (std::size_t oy = 0; oy < d.ho; ++oy) {
                        for (std::size_t ox = 0; ox < d.wo; ++ox) {
                            T acc = pb[oc];
                            const std::ptrdiff_t iy0 = static_cast<std::ptrdiff_t>(oy) * d.stride - d.pad;
                            const std::ptrdiff_t ix0 = static_cast<std::ptrdiff_t>(ox) * d.stride - d.pad;
                            for (std::size_t ic = 0; ic < d.cin; ++ic) {
                                const T* xplane = px + (n * d.cin + ic) * d.h * d.w;
                                const T* wplane = pw + (oc * d.cin + ic) * d.ks * d.ks;
                                for (std::size_t ky = 0; ky < d.ks; ++ky) {
                                    const std::ptrdiff_t iy = iy0 + static_cast<std::ptrdiff_t>(ky);
                                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
                                    for (std::size_t kx = 0; kx < d.ks; ++kx) {
                                        const std::ptrdiff_t ix = ix0 + static_cast<std::ptrdiff_t>(kx);
                                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
                                        acc += xplane[iy * static_cast<std::ptrdiff_t>(d.w) + ix] *
                                               wplane[ky * d.ks + kx];
                                    }
                                }
                            }
                            oplane[oy * d.wo + ox] = acc;
                        }
                    }
                }
            });
            return out;
        }
        case Kernel::maxpool2d: {
            expect_arity(kind, in, 1);
            const auto& x = in[0];
            if (x.rank() != 4) fail(kind, "input must be [B,C,H,W], got " + shape_str(x.shape()));
            const int k = attrs.pool_k;
            if (k < 1) fail(kind, "pool size must be >= 1");
            const std::size_t ho = x.dim(2) / static_cast<std::size_t>(k);
            const std::size_t wo = x.dim(3) / static_cast<std::size_t>(k);
            if (ho == 0 || wo == 0)
                fail(kind, "pool " + std::to_string(k) + " collapses " + shape_str(x.shape()) + " to zero");
            auto out = Tensor<T>::zeros({x.dim(0), x.dim(1), ho, wo});
            std::vector<T> argmax(out.numel());
            const auto* px = x.data().data();
            auto* po = out.mutable_data().data();
            const std::size_t planes = x.dim(0) * x.dim(1);
            const std::size_t h = x.dim(2), w = x.dim(3);
            for (std::size_t p = 0; p < planes; ++p) {
                const T* xp = px + p * h * w;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        // Ties resolve to the first index in row-major scan order.
                        std::size_t best = (oy * k) * w + ox * k;
                        T bv = xp[best];
                        for (std::size_t ky = 0; ky < static_cast<std::size_t>(k); ++ky) {
                            for (std::size_t kx = 0; kx < static_cast<std::size_t>(k); ++kx) {
                                const std::size_t idx = (oy * k + ky) * w + ox * k + kx;
                                if (xp[idx] > bv) {
                                    bv = xp[idx];
                                    best = idx;
                                }
                            }
                        }
                        const std::size_t oidx = p * ho * wo + oy * wo + ox;
                        po[oidx] = bv;
                        argmax[oidx] = static_cast<T>(p * h * w + best);
                    }
                }
            }
            if (saved) saved->push_back(std::move(argmax));
            return out;
        }
        case Kernel::global_avg_pool: {
            expect_arity(kind, in, 1);
            const auto& x = in[0];
            if (x.rank() != 4) fail(kind, "input must be [B,C,H,W], got " + shape_str(x.shape()));
            const std::size_t hw = x.dim(2) * x.dim(3);
            auto out = Tensor<T>::zeros({x.dim(0), x.dim(1)});
            const auto* px = x.data().data();
            auto* po = out.mutable_data().data();
            for (std::size_t p = 0; p < x.dim(0) * x.dim(1); ++p) {
                T acc = T(0);
                for (std::size_t i = 0; i < hw; ++i) acc += px[p * hw + i];
                po[p] = acc / static_cast<T>(hw);
            }
            return out;
        }
        case Kernel::mean_reduce:
        case Kernel::sum_reduce: {
            expect_arity(kind, in, 1);
            const auto d = axis_dims(kind, in[0], attrs.axis);
            auto out = Tensor<T>::zeros(d.out_shape);
            const auto* px = in[0].data().data();
            auto* po = out.mutable_data().data();
            const T scale = kind == Kernel::mean_reduce ? T(1) / static_cast<T>(d.n) : T(1);
            for (std::size_t o = 0; o < d.outer; ++o) {
                for (std::size_t i = 0; i < d.inner; ++i) {
                    T acc = T(0);
                    for (std::size_t a = 0; a < d.n; ++a) acc += px[(o * d.n + a) * d.inner + i];
                    po[o * d.inner + i] = acc * scale;
                }
            }
            return out;
        }
        case Kernel::concat: {
            if (in.size() < 2) fail(kind, "needs at least 2 inputs");
            const auto a = static_cast<std::size_t>(attrs.axis);
            const auto& first = in[0].shape();
            if (attrs.axis < 0 || a >= first.size()) fail(kind, "bad axis " + std::to_string(attrs.axis));
            Shape out_shape = first;
            for (std::size_t i = 1; i < in.size(); ++i) {
                const auto& s = in[i].shape();
                if (s.size() != first.size()) fail(kind, "rank mismatch at input " + std::to_string(i));
                for (std::size_t dd = 0; dd < s.size(); ++dd) {
                    if (dd == a) continue;
                    if (s[dd] != first[dd])
                        fail(kind, "dim mismatch at input " + std::to_string(i) + ": " + shape_str(s) +
                                       " vs " + shape_str(first));
                }
                out_shape[a] += s[a];
            }
            std::size_t outer = 1, inner = 1;
            for (std::size_t i = 0; i < a; ++i) outer *= first[i];
            for (std::size_t i = a + 1; i < first.size(); ++i) inner *= first[i];
            auto out = Tensor<T>::zeros(out_shape);
            auto* po = out.mutable_data().data();
            const std::size_t out_block = out_shape[a] * inner;
            std::size_t offset = 0;
            for (const auto& t : in) {
                const std::size_t block = t.dim(a) * inner;
                const auto* pt = t.data().data();
                for (std::size_t o = 0; o < outer; ++o)
                    std::memcpy(po + o * out_block + offset, pt + o * block, block * sizeof(T));
                offset += block;
            }
            return out;
        }
        case Kernel::slice_view: {
            expect_arity(kind, in, 1);
            const auto& x = in[0];
            if (x.rank() == 0) fail(kind, "cannot slice a scalar");
            if (attrs.starts.size() != x.rank() || attrs.sizes.size() != x.rank())
                fail(kind, "starts/sizes rank mismatch for " + shape_str(x.shape()));
            for (std::size_t d = 0; d < x.rank(); ++d)
                if (attrs.starts[d] + attrs.sizes[d] > x.dim(d))
                    fail(kind, "slice [" + std::to_string(attrs.starts[d]) + "+" +
                                   std::to_string(attrs.sizes[d]) + ") exceeds dim " + std::to_string(d) +
                                   " of " + shape_str(x.shape()));
            auto out = Tensor<T>::zeros(Shape(attrs.sizes));
            // Strides of the source.
            std::vector<std::size_t> stride(x.rank(), 1);
            for (std::size_t d = x.rank(); d-- > 1;) stride[d - 1] = stride[d] * x.dim(d);
            auto* po = out.mutable_data().data();
            const auto* px = x.data().data();
            std::vector<std::size_t> idx(x.rank(), 0);
            const std::size_t n = out.numel();
            const std::size_t last = x.rank() - 1;
            for (std::size_t flat = 0; flat < n;) {
                std::size_t src = 0;
                for (std::size_t d = 0; d < x.rank(); ++d) src += (attrs.starts[d] + idx[d]) * stride[d];
                const std::size_t run = attrs.sizes[last];
                std::memcpy(po + flat, px + src, run * sizeof(T));
                flat += run;
                for (std::size_t d = last; d-- > 0;) {
                    if (++idx[d] < attrs.sizes[d]) break;
                    idx[d] = 0;
                }
            }
            return out;
        }
        case Kernel::reshape: {
            expect_arity(kind, in, 1);
            if (shape_numel(attrs.new_shape) != in[0].numel())
                fail(kind, shape_str(in[0].shape()) + " cannot reshape to " + shape_str(attrs.new_shape));
            return Tensor<T>::from_data(attrs.new_shape,
                                        std::vector<T>(in[0].data().begin(), in[0].data().end()));
        }
        case Kernel::scaled_dot_attention: {
            expect_arity(kind, in, 3);
            const auto& q = in[0];
            const auto& k = in[1];
            const auto& v = in[2];
            if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) ||
                k.dim(0) != v.dim(0))
                fail(kind, "expected q[S,d] k[S2,d] v[S2,dv], got " + shape_str(q.shape()) + " " +
                               shape_str(k.shape()) + " " + shape_str(v.shape()));
            if (attrs.causal && q.dim(0) != k.dim(0)) fail(kind, "causal mask needs square scores");
            const std::size_t s = q.dim(0), s2 = k.dim(0), dh = q.dim(1), dv = v.dim(1);
            const T scale = T(1) / std::sqrt(static_cast<T>(dh));
            std::vector<T> scores(s * s2);
            matmul_raw(q.data().data(), k.data().data(), scores.data(), s, dh, s2, false, true);
            const T neg_inf = -std::numeric_limits<T>::infinity();
            for (std::size_t i = 0; i < s; ++i) {
                for (std::size_t j = 0; j < s2; ++j) {
                    T& sc = scores[i * s2 + j];
                    sc = (attrs.causal && j > i) ? neg_inf : sc * scale;
                }
            }
            std::vector<T> probs(s * s2);
            softmax_rows(scores.data(), probs.data(), s, s2);
            auto out = Tensor<T>::zeros({s, dv});
            matmul_raw(probs.data(), v.data().data(), out.mutable_data().data(), s, s2, dv, false, false);
            if (saved) saved->push_back(std::move(probs));
            return out;
        }
        case Kernel::cross_entropy: {
            expect_arity(kind, in, 1);
            const auto& logits = in[0];
            if (logits.rank() != 2) fail(kind, "logits must be [B,K], got " + shape_str(logits.shape()));
            const std::size_t batch = logits.dim(0), classes = logits.dim(1);
            if (attrs.ids.size() != batch)
                fail(kind, "got " + std::to_string(attrs.ids.size()) + " labels for batch " +
                               std::to_string(batch));
            std::vector<T> probs(batch * classes);
            softmax_rows(logits.data().data(), probs.data(), batch, classes);
            const auto* px = logits.data().data();
            T total = T(0);
            for (std::size_t r = 0; r < batch; ++r) {
                const auto y = attrs.ids[r];
                if (y < 0 || static_cast<std::size_t>(y) >= classes)
                    fail(kind, "label " + std::to_string(y) + " outside [0," + std::to_string(classes) + ")");
                const T* xr = px + r * classes;
                T mx = xr[0];
                for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, xr[c]);
                T sum = T(0);
                for (std::size_t c = 0; c < classes; ++c) sum += std::exp(xr[c] - mx);
                total += mx + std::log(sum) - xr[static_cast<std::size_t>(y)];
            }
            if (saved) saved->push_back(std::move(probs));
            return Tensor<T>::scalar(total / static_cast<T>(batch));
        }
        case Kernel::mse: {
            expect_arity(kind, in, 2);
            if (in[0].shape() != in[1].shape())
                fail(kind, "shapes differ: " + shape_str(in[0].shape()) + " vs " + shape_str(in[1].shape()));
            const auto* a = in[0].data().data();
            const auto* b = in[1].data().data();
            T acc = T(0);
            for (std::size_t i = 0; i < in[0].numel(); ++i) {
                const T d = a[i] - b[i];
                acc += d * d;
            }
            return Tensor<T>::scalar(acc / static_cast<T>(in[0].numel()));
        }
    }
    throw ShapeError("unknown kernel id " + std::to_string(static_cast<int>(kind)));
}

// Accumulates input gradients for one recorded op.
template <typename T>
void kernel_vjp(const TapeOp<T>& op, const std::vector<T>& gout, GradMap<T>& grads) {
    auto sink = [&grads](const Tensor<T>& t) -> std::vector<T>& {
        auto [it, inserted] = grads.try_emplace(t.id());
        if (inserted) it->second.assign(t.numel(), T(0));
        return it->second;
    };
    auto wanted = [](const Tensor<T>& t) { return t.requires_grad(); };
    const auto& in = op.inputs;
    const auto& attrs = op.attrs;

    switch (op.kind) {
        case Kernel::matmul: {
            const auto& a = in[0];
            const auto& b = in[1];
            const std::size_t m = attrs.trans_a ? a.dim(1) : a.dim(0);
            const std::size_t k = attrs.trans_a ? a.dim(0) : a.dim(1);
            const std::size_t n = attrs.trans_b ? b.dim(0) : b.dim(1);
            // C = A' B' with optional transposes; chain rule per case.
            if (wanted(a)) {
                auto& ga = sink(a);
                std::vector<T> tmp(a.numel());
                if (!attrs.trans_a)
                    matmul_raw(gout.data(), b.data().data(), tmp.data(), m, n, k, false, !attrs.trans_b);
                else
                    matmul_raw(b.data().data(), gout.data(), tmp.data(), k, n, m, attrs.trans_b, true);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += tmp[i];
            }
            if (wanted(b)) {
                auto& gb = sink(b);
                std::vector<T> tmp(b.numel());
                if (!attrs.trans_b)
                    matmul_raw(a.data().data(), gout.data(), tmp.data(), k, m, n, !attrs.trans_a, false);
                else
                    matmul_raw(gout.data(), a.data().data(), tmp.data(), n, m, k, true, attrs.trans_a);
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += tmp[i];
            }
            break;
        }
        case Kernel::add: {
            const auto& a = in[0];
            const auto& b = in[1];
            if (wanted(a)) {
                auto& ga = sink(a);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i];
            }
            if (wanted(b)) {
                auto& gb = sink(b);
                if (a.shape() == b.shape()) {
                    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gout[i];
                } else {
                    const auto [rows, cols] = as_rows(a.shape());
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < cols; ++c) gb[c] += gout[r * cols + c];
                }
            }
            break;
        }
        case Kernel::mul: {
            const auto* a = in[0].data().data();
            const auto* b = in[1].data().data();
            if (wanted(in[0])) {
                auto& ga = sink(in[0]);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i] * b[i];
            }
            if (wanted(in[1])) {
                auto& gb = sink(in[1]);
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gout[i] * a[i];
            }
            break;
        }
        case Kernel::relu: {
            if (!wanted(in[0])) break;
            auto& g = sink(in[0]);
            const auto* x = in[0].data().data();
            // Subgradient 0 at x <= 0.
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += x[i] > T(0) ? gout[i] : T(0);
            break;
        }
        case Kernel::tanh: {
            if (!wanted(in[0])) break;
            auto& g = sink(in[0]);
            const auto* y = op.output.data().data();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * (T(1) - y[i] * y[i]);
            break;
        }
        case Kernel::softmax: {
            if (!wanted(in[0])) break;
            auto& g = sink(in[0]);
            const auto* y = op.output.data().data();
            const auto [rows, cols] = as_rows(in[0].shape());
            for (std::size_t r = 0; r < rows; ++r) {
                T dot = T(0);
                for (std::size_t c = 0; c < cols; ++c) dot += gout[r * cols + c] * y[r * cols + c];
                for (std::size_t c = 0; c < cols; ++c)
                    g[r * cols + c] += y[r * cols + c] * (gout[r * cols + c] - dot);
            }
            break;
        }
        case Kernel::log_softmax: {
            if (!wanted(in[0])) break;
            auto& g = sink(in[0]);
            const auto* y = op.output.data().data();
            const auto [rows, cols] = as_rows(in[0].shape());
            for (std::size_t r = 0; r < rows; ++r) {
                T gsum = T(0);
                for (std::size_t c = 0; c < cols; ++c) gsum += gout[r * cols + c];
                for (std::size_t c = 0; c < cols; ++c)
                    g[r * cols + c] += gout[r * cols + c] - std::exp(y[r * cols + c]) * gsum;
            }
            break;
        }
        case Kernel::layernorm: {
            const auto& x = in[0];
            const auto& gamma = in[1];
            const auto [rows, cols] = as_rows(x.shape());
            const auto& mean = op.saved[0];
            const auto& rstd = op.saved[1];
            const auto* px = x.data().data();
            const auto* pg = gamma.data().data();
            const T cn = static_cast<T>(cols);
            std::vector<T>* gx = wanted(x) ? &sink(x) : nullptr;
            std::vector<T>* gg = wanted(gamma) ? &sink(gamma) : nullptr;
            std::vector<T>* gb = wanted(in[2]) ? &sink(in[2]) : nullptr;
            for (std::size_t r = 0; r < rows; ++r) {
                const T* xr = px + r * cols;
                const T* gr = gout.data() + r * cols;
                if (gg || gb) {
                    for (std::size_t c = 0; c < cols; ++c) {
                        const T xhat = (xr[c] - mean[r]) * rstd[r];
                        if (gg) (*gg)[c] += gr[c] * xhat;
                        if (gb) (*gb)[c] += gr[c];
                    }
                }
                if (gx) {
                    T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
                    for (std::size_t c = 0; c < cols; ++c) {
                        const T xhat = (xr[c] - mean[r]) * rstd[r];
                        const T dxhat = gr[c] * pg[c];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    for (std::size_t c = 0; c < cols; ++c) {
                        const T xhat = (xr[c] - mean[r]) * rstd[r];
                        const T dxhat = gr[c] * pg[c];
                        (*gx)[r * cols + c] +=
                            rstd[r] * (dxhat - sum_dxhat / cn - xhat * sum_dxhat_xhat / cn);
                    }
                }
            }
            break;
        }
        case Kernel::embedding_lookup: {
            if (!wanted(in[0])) break;
            auto& g = sink(in[0]);
            const std::size_t dim = in[0].dim(1);
            for (std::size_t i = 0; i < attrs.ids.size(); ++i) {
                const auto row = static_cast<std::size_t>(attrs.ids[i]);
                for (std::size_t c = 0; c < dim; ++c) g[row * dim + c] += gout[i * dim + c];
            }
            break;
        }
        case Kernel::conv2d: {
            const auto d = conv2d_dims(op.kind, in[0], in[1], in[2], attrs);
            const auto* px = in[0].data().data();
            const auto* pw = in[1].data().data();
            std::vector<T>* gx = wanted(in[0]) ? &sink(in[0]) : nullptr;
            std::vector<T>* gw = wanted(in[1]) ? &sink(in[1]) : nullptr;
            std::vector<T>* gb = wanted(in[2]) ? &sink(in[2]) : nullptr;
            for (std::size_t n = 0; n < d.batch; ++n) {
                for (std::size_t oc = 0; oc < d.cout; ++oc) {
                    const T* gplane = gout.data() + (n * d.cout + oc) * d.ho * d.wo;
                    for (std::size_t oy = 0; oy < d.ho; ++oy) {
                        for (std::size_t ox = 0; ox < d.wo; ++ox) {
                            const T go = gplane[oy * d.wo + ox];
                            if (go == T(0)) continue;
                            if (gb) (*gb)[oc] += go;
                            const std::ptrdiff_t iy0 = static_cast<std::ptrdiff_t>(oy) * d.stride - d.pad;
                            const std::ptrdiff_t ix0 = static_cast<std::ptrdiff_t>(ox) * d.stride - d.pad;
                            for (std::size_t ic = 0; ic < d.cin; ++ic) {
                                const std::size_t xbase = (n * d.cin + ic) * d.h * d.w;
                                const std::size_t wbase = (oc * d.cin + ic) * d.ks * d.ks;
                                for (std::size_t ky = 0; ky < d.ks; ++ky) {
                                    const std::ptrdiff_t iy = iy0 + static_cast<std::ptrdiff_t>(ky);
                                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
                                    for (std::size_t kx = 0; kx < d.ks; ++kx) {
                                        const std::ptrdiff_t ix = ix0 + static_cast<std::ptrdiff_t>(kx);
                                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
                                        const std::size_t xi =
                                            xbase + static_cast<std::size_t>(iy) * d.w +
                                            static_cast<std::size_t>(ix);
                                        if (gw) (*gw)[wbase + ky * d.ks + kx] += go * px[xi];
                                        if (gx) (*gx)[xi] += go * pw[wbase + ky * d.ks + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            break;
        }
        case Kernel::maxpool2d: {
            if (!wanted(in[0])) break;
            auto& g = sink(in[0]);
            const auto& argmax = op.saved[0];
            for (std::size_t i = 0; i < gout.size(); ++i)
                g[static_cast<std::size_t>(argmax[i])] += gout[i];
            break;
        }
        case Kernel::global_avg_pool: {
            if (!wanted(in[0])) break;
            auto& g = sink(in[0]);
            const std::size_t hw = in[0].dim(2) * in[0].dim(3);
            const T inv = T(1) / static_cast<T>(hw);
            for (std::size_t p = 0; p < gout.size(); ++p)
                for (std::size_t i = 0; i < hw; ++i) g[p * hw + i] += gout[p] * inv;
            break;
        }
        case Kernel::mean_reduce:
        case Kernel::sum_reduce: {
            if (!wanted(in[0])) break;
            auto& g = sink(in[0]);
            const auto d = axis_dims(op.kind, in[0], attrs.axis);
            const T scale = op.kind == Kernel::mean_reduce ? T(1) / static_cast<T>(d.n) : T(1);
            for (std::size_t o = 0; o < d.outer; ++o)
                for (std::size_t a = 0; a < d.n; ++a)
                    for (std::size_t i = 0; i < d.inner; ++i)
                        g[(o * d.n + a) * d.inner + i] += gout[o * d.inner + i] * scale;
            break;
        }
        case Kernel::concat: {
            const auto a = static_cast<std::size_t>(attrs.axis);
            std::size_t outer = 1, inner = 1;
            const auto& os = op.output.shape();
            for (std::size_t i = 0; i < a; ++i) outer *= os[i];
            for (std::size_t i = a + 1; i < os.size(); ++i) inner *= os[i];
            const std::size_t out_block = os[a] * inner;
            std::size_t offset = 0;
            for (const auto& t : in) {
                const std::size_t block = t.dim(a) * inner;
                if (wanted(t)) {
                    auto& g = sink(t);
                    for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t i = 0; i < block; ++i)
                            g[o * block + i] += gout[o * out_block + offset + i];
                }
                offset += block;
            }
            break;
        }
        case Kernel::slice_view: {
            if (!wanted(in[0])) break;
            auto& g = sink(in[0]);
            const auto& x = in[0];
            std::vector<std::size_t> stride(x.rank(), 1);
            for (std::size_t d = x.rank(); d-- > 1;) stride[d - 1] = stride[d] * x.dim(d);
            std::vector<std::size_t> idx(x.rank(), 0);
            const std::size_t last = x.rank() - 1;
            for (std::size_t flat = 0; flat < gout.size();) {
                std::size_t src = 0;
                for (std::size_t d = 0; d < x.rank(); ++d) src += (attrs.starts[d] + idx[d]) * stride[d];
                for (std::size_t r = 0; r < attrs.sizes[last]; ++r) g[src + r] += gout[flat + r];
                flat += attrs.sizes[last];
                for (std::size_t d = last; d-- > 0;) {
                    if (++idx[d] < attrs.sizes[d]) break;
                    idx[d] = 0;
                }
            }
            break;
        }
        case Kernel::reshape: {
            if (!wanted(in[0])) break;
            auto& g = sink(in[0]);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i];
            break;
        }
        case Kernel::scaled_dot_attention: {
            const auto& q = in[0];
            const auto& k = in[1];
            const auto& v = in[2];
            const std::size_t s = q.dim(0), s2 = k.dim(0), dh = q.dim(1), dv = v.dim(1);
            const T scale = T(1) / std::sqrt(static_cast<T>(dh));
            const auto& probs = op.saved[0];
            if (wanted(v)) {
                auto& gv = sink(v);
                std::vector<T> tmp(s2 * dv);
                matmul_raw(probs.data(), gout.data(), tmp.data(), s2, s, dv, true, false);
                for (std::size_t i = 0; i < tmp.size(); ++i) gv[i] += tmp[i];
            }
            if (wanted(q) || wanted(k)) {
                std::vector<T> dprobs(s * s2);
                matmul_raw(gout.data(), v.data().data(), dprobs.data(), s, dv, s2, false, true);
                // Softmax backward per row; masked columns carry probs == 0.
                std::vector<T> dscores(s * s2);
                for (std::size_t r = 0; r < s; ++r) {
                    T dot = T(0);
                    for (std::size_t c = 0; c < s2; ++c) dot += dprobs[r * s2 + c] * probs[r * s2 + c];
                    for (std::size_t c = 0; c < s2; ++c)
                        dscores[r * s2 + c] = probs[r * s2 + c] * (dprobs[r * s2 + c] - dot) * scale;
                }
                if (wanted(q)) {
                    auto& gq = sink(q);
                    std::vector<T> tmp(s * dh);
                    matmul_raw(dscores.data(), k.data().data(), tmp.data(), s, s2, dh, false, false);
                    for (std::size_t i = 0; i < tmp.size(); ++i) gq[i] += tmp[i];
                }
                if (wanted(k)) {
                    auto& gk = sink(k);
                    std::vector<T> tmp(s2 * dh);
                    matmul_raw(dscores.data(), q.data().data(), tmp.data(), s2, s, dh, true, false);
                    for (std::size_t i = 0; i < tmp.size(); ++i) gk[i] += tmp[i];
                }
            }
            break;
        }
        case Kernel::cross_entropy: {
            if (!wanted(in[0])) break;
            auto& g = sink(in[0]);
            const auto& probs = op.saved[0];
            const std::size_t batch = in[0].dim(0), classes = in[0].dim(1);
            const T go = gout[0] / static_cast<T>(batch);
            for (std::size_t r = 0; r < batch; ++r) {
                for (std::size_t c = 0; c < classes; ++c) {
                    T p = probs[r * classes + c];
                    if (static_cast<std::int64_t>(c) == attrs.ids[r]) p -= T(1);
                    g[r * classes + c] += go * p;
                }
            }
            break;
        }
        case Kernel::mse: {
            const auto* a = in[0].data().data();
            const auto* b = in[1].data().data();
            const T go = gout[0] * T(2) / static_cast<T>(in[0].numel());
            if (wanted(in[0])) {
                auto& ga = sink(in[0]);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go * (a[i] - b[i]);
            }
            if (wanted(in[1])) {
                auto& gb = sink(in[1]);
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go * (a[i] - b[i]);
            }
            break;
        }
    }
}

template <typename T>
GradTape<T>*& active_tape_slot() {
    thread_local GradTape<T>* tape = nullptr;
    return tape;
}

}  // namespace

std::string_view kernel_name(Kernel k) {
    return kKernelNames[static_cast<std::size_t>(k)];
}

Kernel kernel_from_name(std::string_view name) {
    for (std::size_t i = 0; i < std::size(kKernelNames); ++i)
        if (kKernelNames[i] == name) return static_cast<Kernel>(i);
    throw ShapeError("unknown kernel id '" + std::string(name) + "'");
}

template <typename T>
GradTape<T>* active_tape() {
    return active_tape_slot<T>();
}

template <typename T>
TapeScope<T>::TapeScope(GradTape<T>& tape) : prev_(active_tape_slot<T>()) {
    active_tape_slot<T>() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
    active_tape_slot<T>() = prev_;
}

template <typename T>
Tensor<T> apply_kernel(Kernel kind, const std::vector<Tensor<T>>& inputs, const KernelAttrs& attrs) {
    for (const auto& t : inputs)
        if (!t.defined()) fail(kind, "undefined input tensor");
    bool rg = false;
    for (const auto& t : inputs) rg = rg || t.requires_grad();
    GradTape<T>* tape = active_tape<T>();
    const bool record = tape != nullptr && rg;
    std::vector<std::vector<T>> saved;
    Tensor<T> out = kernel_forward<T>(kind, inputs, attrs, record ? &saved : nullptr);
#ifndef NDEBUG
    for (const T v : out.data()) {
        if (!std::isfinite(v)) {
            bool inputs_finite = true;
            for (const auto& t : inputs)
                for (const T x : t.data()) inputs_finite = inputs_finite && std::isfinite(x);
            if (inputs_finite)
                throw std::logic_error(std::string(kernel_name(kind)) + ": non-finite output from finite inputs");
            break;
        }
    }
#endif
    out.set_requires_grad(rg);
    if (record) {
        tape->record(TapeOp<T>{kind, attrs, inputs, out, std::move(saved)});
    }
    return out;
}

template <typename T>
const GradMap<T>& GradTape<T>::backward(const Tensor<T>& loss) {
    if (consumed_) throw ShapeError("backward: tape already consumed");
    if (loss.numel() != 1)
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    consumed_ = true;
    grads_[loss.id()] = {T(1)};
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
        const auto git = grads_.find(it->output.id());
        if (git == grads_.end()) continue;
        kernel_vjp(*it, git->second, grads_);
    }
    return grads_;
}

template class GradTape<float>;
template class GradTape<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template GradTape<float>* active_tape<float>();
template GradTape<double>* active_tape<double>();
template Tensor<float> apply_kernel<float>(Kernel, const std::vector<Tensor<float>>&, const KernelAttrs&);
template Tensor<double> apply_kernel<double>(Kernel, const std::vector<Tensor<double>>&, const KernelAttrs&);

}  // namespace ng
