// SPDX-License-Identifier: Apache-2.0
#include "neurogen/generator.hpp"

#include <cmath>

#include <json.hpp>

#include "neurogen/kernels.hpp"
#include "neurogen/serialize.hpp"

namespace ng {

std::string stage2_instruction(std::string_view nn_name, std::string_view task,
                               std::string_view dataset_name) {
    std::string s = "Please help generate parameters of the [";
    s += nn_name;
    s += "] neural network to conduct the ";
    s += task;
    s += " task with the [";
    s += dataset_name;
    s += "] data samples.";
    return s;
}

namespace {

constexpr double kInitStd = 0.02;

template <typename T>
Tensor<T> gaussian(Rng& rng, Shape shape, double stddev) {
    auto t = Tensor<T>::zeros(std::move(shape));
    rng.fill_normal<T>(t.mutable_data(), T(0), static_cast<T>(stddev));
    return t;
}

template <typename T>
Tensor<T> learnable(Tensor<T> t) {
    t.set_requires_grad(true);
    return t;
}

// y = x W^T + b
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    return add(matmul(x, w, false, true), b);
}

template <typename T>
Tensor<T> lora_delta(const Tensor<T>& x, const Tensor<T>& a, const Tensor<T>& b, double scale) {
    auto low = matmul(x, a, false, true);          // [S, r]
    auto up = matmul(low, b, false, true);         // [S, d]
    return mul(up, Tensor<T>::full(up.shape(), static_cast<T>(scale)));
}

template <typename T>
Tensor<T> multihead_causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                     std::size_t n_heads) {
    const std::size_t s = q.dim(0), d = q.dim(1);
    const std::size_t dh = d / n_heads;
    std::vector<Tensor<T>> heads;
    heads.reserve(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
        auto qh = slice_view(q, {0, h * dh}, {s, dh});
        auto kh = slice_view(k, {0, h * dh}, {s, dh});
        auto vh = slice_view(v, {0, h * dh}, {s, dh});
        heads.push_back(scaled_dot_attention(qh, kh, vh, /*causal=*/true));
    }
    return n_heads == 1 ? heads[0] : concat(heads, 1);
}

}  // namespace

template <typename T>
std::vector<Tensor<T>*> GeneratorState<T>::trainable_parameters() {
    std::vector<Tensor<T>*> out{&special_tokens};
    for (auto& blk : blocks) {
        out.push_back(&blk.lora_q_a);
        out.push_back(&blk.lora_q_b);
        out.push_back(&blk.lora_v_a);
        out.push_back(&blk.lora_v_b);
    }
    out.push_back(&proj_w1);
    out.push_back(&proj_b1);
    out.push_back(&proj_w2);
    out.push_back(&proj_b2);
    if (patch_dim > 0) {
        out.push_back(&patch_w);
        out.push_back(&patch_b);
    }
    return out;
}

template <typename T>
std::vector<const Tensor<T>*> GeneratorState<T>::frozen_parameters() const {
    std::vector<const Tensor<T>*> out{&token_emb, &pos_emb, &lnf_g, &lnf_b};
    for (const auto& blk : blocks) {
        for (const auto* t : {&blk.ln1_g, &blk.ln1_b, &blk.wq, &blk.bq, &blk.wk, &blk.bk, &blk.wv,
                              &blk.bv, &blk.wo, &blk.bo, &blk.ln2_g, &blk.ln2_b, &blk.w1, &blk.b1,
                              &blk.w2, &blk.b2})
            out.push_back(t);
    }
    return out;
}

template <typename T>
GeneratorState<T> make_generator(const GeneratorConfig& config, const ArchSpec& target,
                                 std::size_t patch_dim) {
    if (config.d_model % config.n_heads != 0)
        throw ConfigError("generator: d_model " + std::to_string(config.d_model) +
                          " not divisible by heads " + std::to_string(config.n_heads));
    if (config.lora_rank < 1) throw ConfigError("generator: lora rank must be >= 1");

    GeneratorState<T> gen;
    gen.config = config;
    gen.target_len = target.layout.total_len;
    gen.arch_hash = target.hash;
    gen.target_layout = target.layout;
    gen.patch_dim = patch_dim;
    gen.d1 = (gen.target_len + config.d_model - 1) / config.d_model;

    const std::size_t d = config.d_model;
    Rng base_rng = Rng(config.seed).stream("gen-base");
    Rng train_rng = Rng(config.seed).stream("gen-trainable");

    gen.token_emb = gaussian<T>(base_rng, {kGenVocab, d}, kInitStd);
    gen.pos_emb = gaussian<T>(base_rng, {config.max_seq_len, d}, kInitStd);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        DecoderBlock<T> blk;
        blk.ln1_g = Tensor<T>::full({d}, T(1));
        blk.ln1_b = Tensor<T>::zeros({d});
        blk.wq = gaussian<T>(base_rng, {d, d}, kInitStd);
        blk.bq = Tensor<T>::zeros({d});
        blk.wk = gaussian<T>(base_rng, {d, d}, kInitStd);
        blk.bk = Tensor<T>::zeros({d});
        blk.wv = gaussian<T>(base_rng, {d, d}, kInitStd);
        blk.bv = Tensor<T>::zeros({d});
        blk.wo = gaussian<T>(base_rng, {d, d}, kInitStd);
        blk.bo = Tensor<T>::zeros({d});
        blk.ln2_g = Tensor<T>::full({d}, T(1));
        blk.ln2_b = Tensor<T>::zeros({d});
        blk.w1 = gaussian<T>(base_rng, {4 * d, d}, kInitStd);
        blk.b1 = Tensor<T>::zeros({4 * d});
        blk.w2 = gaussian<T>(base_rng, {d, 4 * d}, kInitStd);
        blk.b2 = Tensor<T>::zeros({d});

        const std::size_t r = config.lora_rank;
        blk.lora_q_a = learnable(gaussian<T>(train_rng, {r, d}, kInitStd));
        blk.lora_q_b = learnable(Tensor<T>::zeros({d, r}));
        blk.lora_v_a = learnable(gaussian<T>(train_rng, {r, d}, kInitStd));
        blk.lora_v_b = learnable(Tensor<T>::zeros({d, r}));
        gen.blocks.push_back(std::move(blk));
    }
    gen.lnf_g = Tensor<T>::full({d}, T(1));
    gen.lnf_b = Tensor<T>::zeros({d});

    gen.special_tokens = learnable(gaussian<T>(train_rng, {gen.d1, d}, kInitStd));
    gen.proj_w1 = learnable(gaussian<T>(train_rng, {d, d}, kInitStd));
    gen.proj_b1 = learnable(Tensor<T>::zeros({d}));
    gen.proj_w2 = learnable(Tensor<T>::zeros({d, d}));  // fresh generator emits w_g = 0
    gen.proj_b2 = learnable(Tensor<T>::zeros({d}));
    if (patch_dim > 0) {
        gen.patch_w = learnable(gaussian<T>(train_rng, {d, patch_dim}, kInitStd));
        gen.patch_b = learnable(Tensor<T>::zeros({d}));
    }
    return gen;
}

template <typename T>
Tensor<T> extract_patches(const Tensor<T>& dense_batch, std::size_t patch_size) {
    if (dense_batch.rank() == 2) return dense_batch.clone();  // one patch per vector sample
    if (dense_batch.rank() != 4)
        throw ShapeError("extract_patches: expected [B,C,H,W] or [B,D], got " +
                         shape_str(dense_batch.shape()));
    const std::size_t b = dense_batch.dim(0), c = dense_batch.dim(1), h = dense_batch.dim(2),
                      w = dense_batch.dim(3);
    if (patch_size == 0 || h % patch_size != 0 || w % patch_size != 0)
        throw ShapeError("extract_patches: patch " + std::to_string(patch_size) +
                         " does not tile " + shape_str(dense_batch.shape()));
    const std::size_t gy = h / patch_size, gx = w / patch_size;
    const std::size_t pdim = c * patch_size * patch_size;
    std::vector<T> out(b * gy * gx * pdim);
    const auto* src = dense_batch.data().data();
    std::size_t row = 0;
    for (std::size_t n = 0; n < b; ++n) {
        for (std::size_t py = 0; py < gy; ++py) {
            for (std::size_t px = 0; px < gx; ++px, ++row) {
                T* dst = out.data() + row * pdim;
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t y = 0; y < patch_size; ++y)
                        for (std::size_t x = 0; x < patch_size; ++x)
                            *dst++ = src[((n * c + ch) * h + py * patch_size + y) * w + px * patch_size + x];
            }
        }
    }
    return Tensor<T>::from_data({b * gy * gx, pdim}, std::move(out));
}

template <typename T>
Tensor<T> encode_context(GeneratorState<T>& gen, const Tensor<T>& dense_batch) {
    if (gen.patch_dim == 0)
        throw ShapeError("encode_context: generator built without a patch embedder");
    auto patches = extract_patches(dense_batch, gen.config.patch_size);
    if (patches.dim(1) != gen.patch_dim)
        throw ShapeError("encode_context: patch dim " + std::to_string(patches.dim(1)) +
                         " != embedder input " + std::to_string(gen.patch_dim));
    return linear(patches, gen.patch_w, gen.patch_b);
}

template <typename T>
Tensor<T> encode_context(GeneratorState<T>& gen, const TokenBatch& batch) {
    const std::size_t d = gen.config.d_model;
    // Frozen table; pad tokens are masked out of the mean.  One embedding per
    // sample keeps the sequence budget independent of text length.
    std::vector<std::int64_t> ids;
    ids.reserve(batch.ids.size());
    for (std::int64_t id : batch.ids) ids.push_back(id == kPadToken ? kSepToken : id);
    auto x = embedding_lookup(gen.token_emb, ids);
    x = reshape(x, {batch.batch, batch.len, d});
    std::vector<T> mask(batch.batch * batch.len * d, T(0));
    std::vector<T> inv(batch.batch * d);
    for (std::size_t b = 0; b < batch.batch; ++b) {
        const auto n = static_cast<std::size_t>(batch.lengths[b]);
        for (std::size_t t = 0; t < n; ++t)
            std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>((b * batch.len + t) * d), d, T(1));
        std::fill_n(inv.begin() + static_cast<std::ptrdiff_t>(b * d), d, T(1) / static_cast<T>(n));
    }
    x = mul(x, Tensor<T>::from_data({batch.batch, batch.len, d}, std::move(mask)));
    x = sum_reduce(x, 1);
    return mul(x, Tensor<T>::from_data({batch.batch, d}, std::move(inv)));
}

template <typename T>
FlatParams<T> generate(GeneratorState<T>& gen, const Instruction& instruction,
                       const std::optional<Tensor<T>>& context) {
    const std::size_t d = gen.config.d_model;
    if (instruction.ids.empty()) throw ConfigError("generate: empty instruction");

    std::vector<std::int64_t> ids;
    ids.push_back(kBosToken);
    ids.insert(ids.end(), instruction.ids.begin(), instruction.ids.end());
    if (context) ids.push_back(kSepToken);
    auto instr_emb = embedding_lookup(gen.token_emb, ids);

    // [instruction; context; P] — special rows last so their hidden states
    // see everything under the causal mask.
    std::vector<Tensor<T>> parts{instr_emb};
    if (context) {
        if (context->rank() != 2 || context->dim(1) != d)
            throw ShapeError("generate: context must be [n," + std::to_string(d) + "], got " +
                             shape_str(context->shape()));
        parts.push_back(*context);
    }
    parts.push_back(gen.special_tokens);
    auto x = parts.size() == 1 ? parts[0] : concat(parts, 0);

    const std::size_t s = x.dim(0);
    if (s > gen.config.max_seq_len)
        throw ConfigError("generate: sequence of " + std::to_string(s) + " overflows max_seq_len " +
                          std::to_string(gen.config.max_seq_len));
    // Prefix positions count from 0; the special rows take the fixed tail
    // slots of the table so their positional codes do not move when the
    // context length changes between stages.
    const std::size_t prefix = s - gen.d1;
    auto pos = concat<T>({slice_view(gen.pos_emb, {0, 0}, {prefix, d}),
                          slice_view(gen.pos_emb, {gen.config.max_seq_len - gen.d1, 0}, {gen.d1, d})},
                         0);
    x = add(x, pos);

    const double lora_scale = gen.config.lora_scale / static_cast<double>(gen.config.lora_rank);
    for (auto& blk : gen.blocks) {
        auto h = layernorm(x, blk.ln1_g, blk.ln1_b);
        auto q = add(linear(h, blk.wq, blk.bq), lora_delta(h, blk.lora_q_a, blk.lora_q_b, lora_scale));
        auto k = linear(h, blk.wk, blk.bk);
        auto v = add(linear(h, blk.wv, blk.bv), lora_delta(h, blk.lora_v_a, blk.lora_v_b, lora_scale));
        auto attn = multihead_causal_attention(q, k, v, gen.config.n_heads);
        x = add(x, linear(attn, blk.wo, blk.bo));
        auto h2 = layernorm(x, blk.ln2_g, blk.ln2_b);
        auto m = relu(linear(h2, blk.w1, blk.b1));
        x = add(x, linear(m, blk.w2, blk.b2));
    }
    x = layernorm(x, gen.lnf_g, gen.lnf_b);

    auto h_g = slice_view(x, {s - gen.d1, 0}, {gen.d1, d});
    auto t = relu(linear(h_g, gen.proj_w1, gen.proj_b1));
    auto chunks = linear(t, gen.proj_w2, gen.proj_b2);
    auto flat_full = reshape(chunks, {gen.d1 * d});
    auto w = slice_view(flat_full, {0}, {gen.target_len});
    return {w, gen.target_layout, gen.arch_hash};
}

template <typename T>
GeneratorState<T> adapt_generator(const GeneratorState<T>& gen, const ArchSpec& new_target) {
    if (new_target.hash == gen.arch_hash)
        throw ConfigError("adapt_generator: target arch is unchanged");

    GeneratorState<T> out;
    out.config = gen.config;
    out.target_len = new_target.layout.total_len;
    out.arch_hash = new_target.hash;
    out.target_layout = new_target.layout;
    out.patch_dim = gen.patch_dim;
    const std::size_t d = gen.config.d_model;
    out.d1 = (out.target_len + d - 1) / d;

    out.token_emb = gen.token_emb.clone();
    out.pos_emb = gen.pos_emb.clone();
    for (const auto& blk : gen.blocks) {
        DecoderBlock<T> nb;
        nb.ln1_g = blk.ln1_g.clone();
        nb.ln1_b = blk.ln1_b.clone();
        nb.wq = blk.wq.clone();
        nb.bq = blk.bq.clone();
        nb.wk = blk.wk.clone();
        nb.bk = blk.bk.clone();
        nb.wv = blk.wv.clone();
        nb.bv = blk.bv.clone();
        nb.wo = blk.wo.clone();
        nb.bo = blk.bo.clone();
        nb.ln2_g = blk.ln2_g.clone();
        nb.ln2_b = blk.ln2_b.clone();
        nb.w1 = blk.w1.clone();
        nb.b1 = blk.b1.clone();
        nb.w2 = blk.w2.clone();
        nb.b2 = blk.b2.clone();
        nb.lora_q_a = blk.lora_q_a.clone();
        nb.lora_q_b = blk.lora_q_b.clone();
        nb.lora_v_a = blk.lora_v_a.clone();
        nb.lora_v_b = blk.lora_v_b.clone();
        out.blocks.push_back(std::move(nb));
    }
    out.lnf_g = gen.lnf_g.clone();
    out.lnf_b = gen.lnf_b.clone();

    // P resized to d1' rows, reusing the first min(d1, d1'); new rows are
    // drawn from the trainable stream continuation.
    Rng fresh = Rng(gen.config.seed).stream("gen-adapt");
    auto p = gaussian<T>(fresh, {out.d1, d}, kInitStd);
    const std::size_t keep = std::min(gen.d1, out.d1);
    for (std::size_t r = 0; r < keep; ++r)
        for (std::size_t c = 0; c < d; ++c)
            p.mutable_data()[r * d + c] = gen.special_tokens.data()[r * d + c];
    out.special_tokens = learnable(std::move(p));

    // Fresh head sized for the new target; patch embedder carries over as the
    // modality encoder.
    out.proj_w1 = learnable(gaussian<T>(fresh, {d, d}, kInitStd));
    out.proj_b1 = learnable(Tensor<T>::zeros({d}));
    out.proj_w2 = learnable(Tensor<T>::zeros({d, d}));
    out.proj_b2 = learnable(Tensor<T>::zeros({d}));
    if (gen.patch_dim > 0) {
        out.patch_w = gen.patch_w.clone();
        out.patch_b = gen.patch_b.clone();
        out.patch_w.set_requires_grad(true);
        out.patch_b.set_requires_grad(true);
    }
    return out;
}

template <typename T>
Tensor<T> attention_mask_matrix(std::size_t seq_len) {
    auto m = Tensor<T>::zeros({seq_len, seq_len});
    for (std::size_t i = 0; i < seq_len; ++i)
        for (std::size_t j = 0; j <= i; ++j) m.mutable_data()[i * seq_len + j] = T(1);
    return m;
}

// --- checkpoint io ---------------------------------------------------------

namespace {

constexpr std::string_view kNggsMagic = "NGGSv001";

void put_segment(std::string& out, const Tensor<float>& t) {
    detail::put_u64(out, t.numel());
    detail::put_f32s(out, t.data());
}

Tensor<float> get_segment(const std::string& bytes, std::size_t& pos, Shape shape,
                          const std::string& path) {
    const std::uint64_t n = detail::get_u64(bytes, pos, path);
    if (n != shape_numel(shape))
        throw IoError(path + ": segment of " + std::to_string(n) + " values, expected " +
                      shape_str(shape));
    return Tensor<float>::from_data(std::move(shape), detail::get_f32s(bytes, pos, n, path));
}

}  // namespace

void write_nggs(const std::string& path, const GeneratorState<float>& gen) {
    nlohmann::json j{{"d_model", gen.config.d_model},
                     {"n_layers", gen.config.n_layers},
                     {"n_heads", gen.config.n_heads},
                     {"max_seq_len", gen.config.max_seq_len},
                     {"lora_rank", gen.config.lora_rank},
                     {"lora_scale", gen.config.lora_scale},
                     {"patch_size", gen.config.patch_size},
                     {"seed", gen.config.seed},
                     {"d1", gen.d1},
                     {"target_len", gen.target_len},
                     {"arch_hash", gen.arch_hash},
                     {"patch_dim", gen.patch_dim}};
    // Layout travels with the checkpoint so generated weights can be sliced
    // without re-deriving the arch.
    nlohmann::json segs = nlohmann::json::array();
    for (const auto& seg : gen.target_layout.segments)
        segs.push_back({{"layer", seg.layer_index},
                        {"role", std::string(param_role_name(seg.role))},
                        {"shape", seg.shape},
                        {"offset", seg.offset},
                        {"length", seg.length}});
    j["layout"] = {{"total_len", gen.target_layout.total_len}, {"segments", segs}};

    std::string out;
    out += kNggsMagic;
    const std::string blob = j.dump();
    detail::put_u64(out, blob.size());
    out += blob;

    put_segment(out, gen.special_tokens);
    for (const auto& blk : gen.blocks) {
        put_segment(out, blk.lora_q_a);
        put_segment(out, blk.lora_q_b);
        put_segment(out, blk.lora_v_a);
        put_segment(out, blk.lora_v_b);
    }
    put_segment(out, gen.proj_w1);
    put_segment(out, gen.proj_b1);
    put_segment(out, gen.proj_w2);
    put_segment(out, gen.proj_b2);
    if (gen.patch_dim > 0) {
        put_segment(out, gen.patch_w);
        put_segment(out, gen.patch_b);
    }
    put_segment(out, gen.token_emb);
    put_segment(out, gen.pos_emb);
    for (const auto& blk : gen.blocks) {
        for (const auto* t : {&blk.ln1_g, &blk.ln1_b, &blk.wq, &blk.bq, &blk.wk, &blk.bk, &blk.wv,
                              &blk.bv, &blk.wo, &blk.bo, &blk.ln2_g, &blk.ln2_b, &blk.w1, &blk.b1,
                              &blk.w2, &blk.b2})
            put_segment(out, *t);
    }
    put_segment(out, gen.lnf_g);
    put_segment(out, gen.lnf_b);
    detail::write_file(path, out);
}

GeneratorState<float> read_nggs(const std::string& path) {
    const std::string bytes = detail::read_file(path);
    std::size_t pos = 0;
    if (bytes.size() < kNggsMagic.size() ||
        std::string_view(bytes.data(), kNggsMagic.size()) != kNggsMagic)
        throw IoError(path + ": bad magic, expected " + std::string(kNggsMagic));
    pos += kNggsMagic.size();
    const std::uint64_t blob_len = detail::get_u64(bytes, pos, path);
    if (pos + blob_len > bytes.size()) throw IoError(path + ": truncated config blob");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.substr(pos, blob_len));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": bad config blob: " + e.what());
    }
    pos += blob_len;

    GeneratorState<float> gen;
    gen.config.d_model = j.at("d_model").get<std::size_t>();
    gen.config.n_layers = j.at("n_layers").get<std::size_t>();
    gen.config.n_heads = j.at("n_heads").get<std::size_t>();
    gen.config.max_seq_len = j.at("max_seq_len").get<std::size_t>();
    gen.config.lora_rank = j.at("lora_rank").get<std::size_t>();
    gen.config.lora_scale = j.at("lora_scale").get<double>();
    gen.config.patch_size = j.at("patch_size").get<std::size_t>();
    gen.config.seed = j.at("seed").get<std::uint64_t>();
    gen.d1 = j.at("d1").get<std::size_t>();
    gen.target_len = j.at("target_len").get<std::size_t>();
    gen.arch_hash = j.at("arch_hash").get<std::uint64_t>();
    gen.patch_dim = j.at("patch_dim").get<std::size_t>();
    gen.target_layout.total_len = j.at("layout").at("total_len").get<std::size_t>();
    for (const auto& s : j.at("layout").at("segments")) {
        ParamSegment seg;
        seg.layer_index = s.at("layer").get<std::size_t>();
        const auto role = s.at("role").get<std::string>();
        seg.role = role == "weight" ? ParamRole::weight
                                    : role == "bias" ? ParamRole::bias : ParamRole::recurrent;
        seg.shape = s.at("shape").get<Shape>();
        seg.offset = s.at("offset").get<std::size_t>();
        seg.length = s.at("length").get<std::size_t>();
        gen.target_layout.segments.push_back(std::move(seg));
    }

    const std::size_t d = gen.config.d_model;
    const std::size_t r = gen.config.lora_rank;
    gen.special_tokens = learnable(get_segment(bytes, pos, {gen.d1, d}, path));
    for (std::size_t l = 0; l < gen.config.n_layers; ++l) {
        DecoderBlock<float> blk;
        blk.lora_q_a = learnable(get_segment(bytes, pos, {r, d}, path));
        blk.lora_q_b = learnable(get_segment(bytes, pos, {d, r}, path));
        blk.lora_v_a = learnable(get_segment(bytes, pos, {r, d}, path));
        blk.lora_v_b = learnable(get_segment(bytes, pos, {d, r}, path));
        gen.blocks.push_back(std::move(blk));
    }
    gen.proj_w1 = learnable(get_segment(bytes, pos, {d, d}, path));
    gen.proj_b1 = learnable(get_segment(bytes, pos, {d}, path));
    gen.proj_w2 = learnable(get_segment(bytes, pos, {d, d}, path));
    gen.proj_b2 = learnable(get_segment(bytes, pos, {d}, path));
    if (gen.patch_dim > 0) {
        gen.patch_w = learnable(get_segment(bytes, pos, {d, gen.patch_dim}, path));
        gen.patch_b = learnable(get_segment(bytes, pos, {d}, path));
    }
    gen.token_emb = get_segment(bytes, pos, {kGenVocab, d}, path);
    gen.pos_emb = get_segment(bytes, pos, {gen.config.max_seq_len, d}, path);
    for (auto& blk : gen.blocks) {
        blk.ln1_g = get_segment(bytes, pos, {d}, path);
        blk.ln1_b = get_segment(bytes, pos, {d}, path);
        blk.wq = get_segment(bytes, pos, {d, d}, path);
        blk.bq = get_segment(bytes, pos, {d}, path);
        blk.wk = get_segment(bytes, pos, {d, d}, path);
        blk.bk = get_segment(bytes, pos, {d}, path);
        blk.wv = get_segment(bytes, pos, {d, d}, path);
        blk.bv = get_segment(bytes, pos, {d}, path);
        blk.wo = get_segment(bytes, pos, {d, d}, path);
        blk.bo = get_segment(bytes, pos, {d}, path);
        blk.ln2_g = get_segment(bytes, pos, {d}, path);
        blk.ln2_b = get_segment(bytes, pos, {d}, path);
        blk.w1 = get_segment(bytes, pos, {4 * d, d}, path);
        blk.b1 = get_segment(bytes, pos, {4 * d}, path);
        blk.w2 = get_segment(bytes, pos, {d, 4 * d}, path);
        blk.b2 = get_segment(bytes, pos, {d}, path);
    }
    gen.lnf_g = get_segment(bytes, pos, {d}, path);
    gen.lnf_b = get_segment(bytes, pos, {d}, path);
    return gen;
}

template struct GeneratorState<float>;
template struct GeneratorState<double>;
template GeneratorState<float> make_generator(const GeneratorConfig&, const ArchSpec&, std::size_t);
template GeneratorState<double> make_generator(const GeneratorConfig&, const ArchSpec&, std::size_t);
template Tensor<float> extract_patches(const Tensor<float>&, std::size_t);
template Tensor<double> extract_patches(const Tensor<double>&, std::size_t);
template Tensor<float> encode_context(GeneratorState<float>&, const Tensor<float>&);
template Tensor<double> encode_context(GeneratorState<double>&, const Tensor<double>&);
template Tensor<float> encode_context(GeneratorState<float>&, const TokenBatch&);
template Tensor<double> encode_context(GeneratorState<double>&, const TokenBatch&);
template FlatParams<float> generate(GeneratorState<float>&, const Instruction&,
                                    const std::optional<Tensor<float>>&);
template FlatParams<double> generate(GeneratorState<double>&, const Instruction&,
                                     const std::optional<Tensor<double>>&);
template GeneratorState<float> adapt_generator(const GeneratorState<float>&, const ArchSpec&);
template GeneratorState<double> adapt_generator(const GeneratorState<double>&, const ArchSpec&);
template Tensor<float> attention_mask_matrix<float>(std::size_t);
template Tensor<double> attention_mask_matrix<double>(std::size_t);

}  // namespace ng
