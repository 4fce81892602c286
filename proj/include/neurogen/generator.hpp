// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "neurogen/archspec.hpp"
#include "neurogen/dataio.hpp"
#include "neurogen/tokenizer.hpp"

namespace ng {

// Decoder vocabulary: 256 byte tokens plus sequence-structure specials.
constexpr std::int64_t kBosToken = 256;
constexpr std::int64_t kSepToken = 257;
constexpr std::size_t kGenVocab = 258;

constexpr std::string_view kStage1Instruction = "Please help generate parameters of neural networks.";

// "Please help generate parameters of the [NN] neural network to conduct the
// TASK task with the [DATASET] data samples."
std::string stage2_instruction(std::string_view nn_name, std::string_view task,
                               std::string_view dataset_name);

struct Instruction {
    std::string text;
    std::vector<std::int64_t> ids;

    static Instruction make(std::string text) {
        Instruction ins;
        ins.ids = tokenize(text);
        ins.text = std::move(text);
        return ins;
    }
};

struct GeneratorConfig {
    std::size_t d_model = 128;  // = d2, the chunk width
    std::size_t n_layers = 4;
    std::size_t n_heads = 4;
    std::size_t max_seq_len = 1024;
    std::size_t lora_rank = 8;
    double lora_scale = 16.0;
    std::size_t patch_size = 7;  // image context patching
    std::uint64_t seed = 0;
};

template <typename T>
struct DecoderBlock {
    // frozen
    Tensor<T> ln1_g, ln1_b;
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor<T> ln2_g, ln2_b;
    Tensor<T> w1, b1, w2, b2;
    // learnable low-rank deltas on the query and value projections
    Tensor<T> lora_q_a, lora_q_b, lora_v_a, lora_v_b;
};

// Frozen decoder base plus the learnable triple {P, lora, projection head}.
// d1 = ceil(|w| / d_model) special rows; the projection head maps each row's
// hidden state to one d_model-sized parameter chunk, final layer zero-init so
// a fresh generator emits w_g = 0.
template <typename T>
struct GeneratorState {
    GeneratorConfig config;

    // frozen base
    Tensor<T> token_emb;  // [kGenVocab, d]
    Tensor<T> pos_emb;    // [max_seq_len, d]
    std::vector<DecoderBlock<T>> blocks;
    Tensor<T> lnf_g, lnf_b;

    // learnable
    Tensor<T> special_tokens;  // P, [d1, d]
    Tensor<T> proj_w1, proj_b1, proj_w2, proj_b2;
    Tensor<T> patch_w, patch_b;  // defined when patch_dim > 0

    std::size_t d1 = 0;
    std::size_t target_len = 0;  // |w|
    std::uint64_t arch_hash = 0;
    ParamLayout target_layout;
    std::size_t patch_dim = 0;

    std::vector<Tensor<T>*> trainable_parameters();
    std::vector<const Tensor<T>*> frozen_parameters() const;
};

// patch_dim: flattened patch size for dense context (C*p*p for images, D for
// vectors); 0 when the experiment has text or no context.
template <typename T>
GeneratorState<T> make_generator(const GeneratorConfig& config, const ArchSpec& target,
                                 std::size_t patch_dim);

// Dense context: rows of flattened patches -> learnable linear embedder.
// Token context: frozen table lookup, mean-pooled to one embedding per sample.
template <typename T>
Tensor<T> encode_context(GeneratorState<T>& gen, const Tensor<T>& dense_batch);

template <typename T>
Tensor<T> encode_context(GeneratorState<T>& gen, const TokenBatch& batch);

// Splits [B,C,H,W] (patch grid) or [B,D] (one patch per row) into the flat
// patch matrix the embedder consumes.
template <typename T>
Tensor<T> extract_patches(const Tensor<T>& dense_batch, std::size_t patch_size);

// Runs [instruction; context; P] through the LoRA-adapted decoder, projects
// the d1 special-position hidden states, flattens row-major, and truncates to
// |w|.  Gradients flow to {P, lora, head} only.
template <typename T>
FlatParams<T> generate(GeneratorState<T>& gen, const Instruction& instruction,
                       const std::optional<Tensor<T>>& context);

// Fresh head (and resized P, reusing leading rows) for a new target arch;
// lora, patch embedder, and the frozen base carry over.  Stage-2-only
// adaptation starts from here.
template <typename T>
GeneratorState<T> adapt_generator(const GeneratorState<T>& gen, const ArchSpec& new_target);

// Allowed-attention matrix for a sequence of length s under the causal mask;
// entry [i,j] is 1 when position i may attend to j.
template <typename T>
Tensor<T> attention_mask_matrix(std::size_t seq_len);

// Generator checkpoint ("NGGSv001"): JSON config blob, then P, lora, head,
// and base weights as length-prefixed f32 segments.
void write_nggs(const std::string& path, const GeneratorState<float>& gen);
GeneratorState<float> read_nggs(const std::string& path);

}  // namespace ng
