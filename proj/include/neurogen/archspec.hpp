// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "neurogen/tensor.hpp"

namespace ng {

enum class LayerKind : std::uint8_t {
    conv2d,
    relu,
    maxpool2d,
    global_avg_pool,
    linear,
    embedding_ref,
    mean_pool_tokens,
    rnn_vanilla,
    take_last_hidden,
};

std::string_view layer_kind_name(LayerKind k);

struct LayerDesc {
    LayerKind kind;
    std::size_t out_channels = 0;  // conv2d
    int kernel = 0;                // conv2d, square
    int stride = 1;                // conv2d
    int pad = 0;                   // conv2d
    int pool_k = 2;                // maxpool2d
    std::size_t out_features = 0;  // linear
    std::size_t vocab = 0;         // embedding_ref
    std::size_t embed_dim = 0;     // embedding_ref
    bool frozen = true;            // embedding_ref; frozen tables carry no segments
    std::size_t hidden = 0;        // rnn_vanilla
};

enum class ParamRole : std::uint8_t { weight, bias, recurrent };

std::string_view param_role_name(ParamRole r);

struct ParamSegment {
    std::size_t layer_index;
    ParamRole role;
    Shape shape;
    std::size_t offset;
    std::size_t length;
};

struct ParamLayout {
    std::vector<ParamSegment> segments;
    std::size_t total_len = 0;
};

// Declarative target network.  validate_arch() runs shape inference, derives
// the canonical flat layout and the structural hash; every ArchSpec in
// circulation has been validated.
struct ArchSpec {
    std::string name;
    Shape input_shape;  // per-sample: {C,H,W} images, {D} vectors, {L} token sequences
    std::size_t num_classes = 0;
    std::vector<LayerDesc> layers;

    ParamLayout layout;
    std::uint64_t hash = 0;
    bool text_input = false;
    std::size_t embed_dim = 0;  // of the frozen table, when text_input

    std::string canonical() const;
};

ArchSpec validate_arch(ArchSpec arch);

enum class ArchKind : std::uint8_t { cnn3, cnn2, lenet, mlp, mlp_text, rnn_text };

ArchKind arch_kind_from_name(std::string_view name);
std::string_view arch_kind_name(ArchKind k);

struct ArchWidths {
    std::vector<std::size_t> conv_channels{8, 16, 32};
    std::size_t mlp_hidden = 64;
    std::size_t rnn_hidden = 64;
    std::size_t embed_dim = 32;
    std::size_t vocab = 257;  // 256 byte values + pad
};

ArchSpec builtin_arch(ArchKind kind, Shape input_shape, std::size_t num_classes,
                      const ArchWidths& widths = {});

// One flat parameter vector in the layout's canonical order.
template <typename T>
struct FlatParams {
    Tensor<T> values;
    ParamLayout layout;
    std::uint64_t arch_hash = 0;
};

template <typename T>
FlatParams<T> zero_params(const ArchSpec& arch) {
    return {Tensor<T>::zeros({arch.layout.total_len}), arch.layout, arch.hash};
}

// Bit-exact packing of per-layer tensors into a flat vector.  Not recorded on
// tapes; corpus assembly only.
template <typename T>
FlatParams<T> flatten(const std::vector<Tensor<T>>& per_layer, const ParamLayout& layout,
                      std::uint64_t arch_hash);

// Differentiable inverse: slice_view + reshape per segment, so gradients flow
// back into flat.values when it requires grad.
template <typename T>
std::vector<Tensor<T>> slice(const FlatParams<T>& flat);

}  // namespace ng
