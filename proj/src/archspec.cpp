// SPDX-License-Identifier: Apache-2.0
#include "neurogen/archspec.hpp"

#include "neurogen/kernels.hpp"
#include "neurogen/rng.hpp"

namespace ng {

namespace {

[[noreturn]] void invalid(const ArchSpec& arch, const std::string& msg) {
    throw ShapeError("arch '" + arch.name + "': " + msg);
}

void push_segment(ParamLayout& layout, std::size_t layer, ParamRole role, Shape shape) {
    ParamSegment seg;
    seg.layer_index = layer;
    seg.role = role;
    seg.length = shape_numel(shape);
    seg.shape = std::move(shape);
    seg.offset = layout.total_len;
    layout.total_len += seg.length;
    layout.segments.push_back(std::move(seg));
}

}  // namespace

std::string_view layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool2d: return "maxpool2d";
        case LayerKind::global_avg_pool: return "global_avg_pool";
        case LayerKind::linear: return "linear";
        case LayerKind::embedding_ref: return "embedding_ref";
        case LayerKind::mean_pool_tokens: return "mean_pool_tokens";
        case LayerKind::rnn_vanilla: return "rnn_vanilla";
        case LayerKind::take_last_hidden: return "take_last_hidden";
    }
    return "?";
}

std::string_view param_role_name(ParamRole r) {
    switch (r) {
        case ParamRole::weight: return "weight";
        case ParamRole::bias: return "bias";
        case ParamRole::recurrent: return "recurrent";
    }
    return "?";
}

std::string ArchSpec::canonical() const {
    std::string s = "in=" + shape_str(input_shape) + ";classes=" + std::to_string(num_classes);
    for (const auto& l : layers) {
        s += ";" + std::string(layer_kind_name(l.kind));
        switch (l.kind) {
            case LayerKind::conv2d:
                s += ":o" + std::to_string(l.out_channels) + ":k" + std::to_string(l.kernel) + ":s" +
                     std::to_string(l.stride) + ":p" + std::to_string(l.pad);
                break;
            case LayerKind::maxpool2d:
                s += ":k" + std::to_string(l.pool_k);
                break;
            case LayerKind::linear:
                s += ":o" + std::to_string(l.out_features);
                break;
            case LayerKind::embedding_ref:
                s += ":v" + std::to_string(l.vocab) + ":d" + std::to_string(l.embed_dim) +
                     (l.frozen ? ":frozen" : ":learned");
                break;
            case LayerKind::rnn_vanilla:
                s += ":h" + std::to_string(l.hidden);
                break;
            default:
                break;
        }
    }
    return s;
}

ArchSpec validate_arch(ArchSpec arch) {
    if (arch.num_classes < 2) invalid(arch, "num_classes must be >= 2");
    if (arch.layers.empty()) invalid(arch, "no layers");

    arch.layout = ParamLayout{};
    arch.text_input = !arch.layers.empty() && arch.layers.front().kind == LayerKind::embedding_ref;

    // Shape inference over per-sample shapes; layouts collected on the way.
    Shape cur = arch.input_shape;
    bool in_token_space = false;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const auto& l = arch.layers[i];
        switch (l.kind) {
            case LayerKind::conv2d: {
                if (cur.size() != 3) invalid(arch, "conv2d at layer " + std::to_string(i) + " needs C,H,W input, got " + shape_str(cur));
                const std::size_t c = cur[0];
                const auto h = static_cast<std::ptrdiff_t>(cur[1]);
                const auto w = static_cast<std::ptrdiff_t>(cur[2]);
                const std::ptrdiff_t ho = (h + 2 * l.pad - l.kernel) / l.stride + 1;
                const std::ptrdiff_t wo = (w + 2 * l.pad - l.kernel) / l.stride + 1;
                if (l.kernel < 1 || ho < 1 || wo < 1)
                    invalid(arch, "conv2d at layer " + std::to_string(i) + " collapses " + shape_str(cur) + " to zero");
                push_segment(arch.layout, i, ParamRole::weight,
                             {l.out_channels, c, static_cast<std::size_t>(l.kernel), static_cast<std::size_t>(l.kernel)});
                push_segment(arch.layout, i, ParamRole::bias, {l.out_channels});
                cur = {l.out_channels, static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)};
                break;
            }
            case LayerKind::relu:
                break;
            case LayerKind::maxpool2d: {
                if (cur.size() != 3) invalid(arch, "maxpool2d needs C,H,W input, got " + shape_str(cur));
                const std::size_t ho = cur[1] / static_cast<std::size_t>(l.pool_k);
                const std::size_t wo = cur[2] / static_cast<std::size_t>(l.pool_k);
                if (ho == 0 || wo == 0)
                    invalid(arch, "maxpool2d at layer " + std::to_string(i) + " pools " + shape_str(cur) + " to zero");
                cur = {cur[0], ho, wo};
                break;
            }
            case LayerKind::global_avg_pool: {
                if (cur.size() != 3) invalid(arch, "global_avg_pool needs C,H,W input, got " + shape_str(cur));
                cur = {cur[0]};
                break;
            }
            case LayerKind::linear: {
                const std::size_t in_features = shape_numel(cur);  // implicit flatten
                if (in_token_space) invalid(arch, "linear cannot consume a token sequence directly");
                push_segment(arch.layout, i, ParamRole::weight, {l.out_features, in_features});
                push_segment(arch.layout, i, ParamRole::bias, {l.out_features});
                cur = {l.out_features};
                break;
            }
            case LayerKind::embedding_ref: {
                if (i != 0) invalid(arch, "embedding_ref must be the first layer");
                if (cur.size() != 1) invalid(arch, "embedding_ref needs a token sequence {L}, got " + shape_str(cur));
                if (!l.frozen) push_segment(arch.layout, i, ParamRole::weight, {l.vocab, l.embed_dim});
                arch.embed_dim = l.embed_dim;
                cur = {cur[0], l.embed_dim};
                in_token_space = true;
                break;
            }
            case LayerKind::mean_pool_tokens: {
                if (cur.size() != 2) invalid(arch, "mean_pool_tokens needs {L,d}, got " + shape_str(cur));
                cur = {cur[1]};
                in_token_space = false;
                break;
            }
            case LayerKind::rnn_vanilla: {
                if (cur.size() != 2) invalid(arch, "rnn_vanilla needs {L,d}, got " + shape_str(cur));
                push_segment(arch.layout, i, ParamRole::weight, {l.hidden, cur[1]});
                push_segment(arch.layout, i, ParamRole::recurrent, {l.hidden, l.hidden});
                push_segment(arch.layout, i, ParamRole::bias, {l.hidden});
                cur = {cur[0], l.hidden};
                break;
            }
            case LayerKind::take_last_hidden: {
                if (cur.size() != 2) invalid(arch, "take_last_hidden needs {L,h}, got " + shape_str(cur));
                cur = {cur[1]};
                in_token_space = false;
                break;
            }
        }
    }
    if (cur != Shape{arch.num_classes})
        invalid(arch, "network ends in " + shape_str(cur) + ", expected [" + std::to_string(arch.num_classes) + "] logits");
    if (arch.layout.total_len == 0) invalid(arch, "no trainable parameters");

    arch.hash = fnv1a64(arch.canonical());
    return arch;
}

ArchKind arch_kind_from_name(std::string_view name) {
    if (name == "cnn3") return ArchKind::cnn3;
    if (name == "cnn2") return ArchKind::cnn2;
    if (name == "lenet") return ArchKind::lenet;
    if (name == "mlp") return ArchKind::mlp;
    if (name == "mlp_text") return ArchKind::mlp_text;
    if (name == "rnn_text") return ArchKind::rnn_text;
    throw ConfigError("unknown architecture kind '" + std::string(name) + "'");
}

std::string_view arch_kind_name(ArchKind k) {
    switch (k) {
        case ArchKind::cnn3: return "cnn3";
        case ArchKind::cnn2: return "cnn2";
        case ArchKind::lenet: return "lenet";
        case ArchKind::mlp: return "mlp";
        case ArchKind::mlp_text: return "mlp_text";
        case ArchKind::rnn_text: return "rnn_text";
    }
    return "?";
}

ArchSpec builtin_arch(ArchKind kind, Shape input_shape, std::size_t num_classes,
                      const ArchWidths& widths) {
    ArchSpec arch;
    arch.name = arch_kind_name(kind);
    arch.input_shape = std::move(input_shape);
    arch.num_classes = num_classes;

    auto conv = [](std::size_t out, int k, int stride, int pad) {
        LayerDesc l;
        l.kind = LayerKind::conv2d;
        l.out_channels = out;
        l.kernel = k;
        l.stride = stride;
        l.pad = pad;
        return l;
    };
    auto simple = [](LayerKind k) {
        LayerDesc l;
        l.kind = k;
        return l;
    };
    auto pool = [](int k) {
        LayerDesc l;
        l.kind = LayerKind::maxpool2d;
        l.pool_k = k;
        return l;
    };
    auto linear = [](std::size_t out) {
        LayerDesc l;
        l.kind = LayerKind::linear;
        l.out_features = out;
        return l;
    };
    auto embedding = [&](std::size_t dim) {
        LayerDesc l;
        l.kind = LayerKind::embedding_ref;
        l.vocab = widths.vocab;
        l.embed_dim = dim;
        l.frozen = true;
        return l;
    };

    switch (kind) {
        case ArchKind::cnn3:
        case ArchKind::cnn2: {
            if (arch.input_shape.size() != 3)
                throw ShapeError("arch '" + arch.name + "': image input must be {C,H,W}, got " + shape_str(arch.input_shape));
            const std::size_t blocks = kind == ArchKind::cnn3 ? 3 : 2;
            if (widths.conv_channels.size() < blocks)
                throw ConfigError("arch '" + arch.name + "': needs " + std::to_string(blocks) + " conv widths");
            for (std::size_t b = 0; b < blocks; ++b) {
                arch.layers.push_back(conv(widths.conv_channels[b], 3, 1, 1));
                arch.layers.push_back(simple(LayerKind::relu));
                arch.layers.push_back(pool(2));
            }
            arch.layers.push_back(simple(LayerKind::global_avg_pool));
            arch.layers.push_back(linear(num_classes));
            break;
        }
        case ArchKind::lenet: {
            if (arch.input_shape.size() != 3)
                throw ShapeError("arch 'lenet': image input must be {C,H,W}, got " + shape_str(arch.input_shape));
            arch.layers.push_back(conv(6, 5, 1, 2));
            arch.layers.push_back(simple(LayerKind::relu));
            arch.layers.push_back(pool(2));
            arch.layers.push_back(conv(16, 5, 1, 0));
            arch.layers.push_back(simple(LayerKind::relu));
            arch.layers.push_back(pool(2));
            arch.layers.push_back(linear(120));
            arch.layers.push_back(simple(LayerKind::relu));
            arch.layers.push_back(linear(84));
            arch.layers.push_back(simple(LayerKind::relu));
            arch.layers.push_back(linear(num_classes));
            break;
        }
        case ArchKind::mlp: {
            if (arch.input_shape.size() != 1)
                throw ShapeError("arch 'mlp': vector input must be {D}, got " + shape_str(arch.input_shape));
            arch.layers.push_back(linear(widths.mlp_hidden));
            arch.layers.push_back(simple(LayerKind::relu));
            arch.layers.push_back(linear(num_classes));
            break;
        }
        case ArchKind::mlp_text: {
            if (arch.input_shape.size() != 1)
                throw ShapeError("arch 'mlp_text': input must be a token sequence {L}, got " + shape_str(arch.input_shape));
            arch.layers.push_back(embedding(widths.embed_dim));
            arch.layers.push_back(simple(LayerKind::mean_pool_tokens));
            arch.layers.push_back(linear(widths.mlp_hidden));
            arch.layers.push_back(simple(LayerKind::relu));
            arch.layers.push_back(linear(num_classes));
            break;
        }
        case ArchKind::rnn_text: {
            if (arch.input_shape.size() != 1)
                throw ShapeError("arch 'rnn_text': input must be a token sequence {L}, got " + shape_str(arch.input_shape));
            arch.layers.push_back(embedding(widths.embed_dim));
            LayerDesc rnn;
            rnn.kind = LayerKind::rnn_vanilla;
            rnn.hidden = widths.rnn_hidden;
            arch.layers.push_back(rnn);
            arch.layers.push_back(simple(LayerKind::take_last_hidden));
            arch.layers.push_back(linear(num_classes));
            break;
        }
    }
    return validate_arch(std::move(arch));
}

template <typename T>
FlatParams<T> flatten(const std::vector<Tensor<T>>& per_layer, const ParamLayout& layout,
                      std::uint64_t arch_hash) {
    if (per_layer.size() != layout.segments.size())
        throw ShapeError("flatten: got " + std::to_string(per_layer.size()) + " tensors for " +
                         std::to_string(layout.segments.size()) + " segments");
    std::vector<T> flat(layout.total_len);
    for (std::size_t i = 0; i < per_layer.size(); ++i) {
        const auto& seg = layout.segments[i];
        if (per_layer[i].shape() != seg.shape)
            throw ShapeError("flatten: segment " + std::to_string(i) + " (" +
                             std::string(param_role_name(seg.role)) + " of layer " +
                             std::to_string(seg.layer_index) + ") expects " + shape_str(seg.shape) +
                             ", got " + shape_str(per_layer[i].shape()));
        auto src = per_layer[i].data();
        std::copy(src.begin(), src.end(), flat.begin() + static_cast<std::ptrdiff_t>(seg.offset));
    }
    return {Tensor<T>::from_data({layout.total_len}, std::move(flat)), layout, arch_hash};
}

template <typename T>
std::vector<Tensor<T>> slice(const FlatParams<T>& flat) {
    if (flat.values.numel() != flat.layout.total_len)
        throw ShapeError("slice: vector of length " + std::to_string(flat.values.numel()) +
                         " does not match layout total " + std::to_string(flat.layout.total_len));
    std::vector<Tensor<T>> out;
    out.reserve(flat.layout.segments.size());
    for (const auto& seg : flat.layout.segments) {
        auto piece = slice_view(flat.values, {seg.offset}, {seg.length});
        out.push_back(reshape(piece, seg.shape));
    }
    return out;
}

template FlatParams<float> flatten(const std::vector<Tensor<float>>&, const ParamLayout&, std::uint64_t);
template FlatParams<double> flatten(const std::vector<Tensor<double>>&, const ParamLayout&, std::uint64_t);
template std::vector<Tensor<float>> slice(const FlatParams<float>&);
template std::vector<Tensor<double>> slice(const FlatParams<double>&);

}  // namespace ng
