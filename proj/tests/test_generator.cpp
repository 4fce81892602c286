// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "neurogen/gradcheck.hpp"
#include "neurogen/generator.hpp"
#include "neurogen/serialize.hpp"
#include "neurogen/tape.hpp"
#include "neurogen/training.hpp"

using namespace ng;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/ng_generator_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

GeneratorConfig miniature_config(std::uint64_t seed = 9) {
    GeneratorConfig gc;
    gc.d_model = 16;
    gc.n_layers = 2;
    gc.n_heads = 2;
    gc.max_seq_len = 512;
    gc.lora_rank = 2;
    gc.lora_scale = 4.0;
    gc.patch_size = 2;
    gc.seed = seed;
    return gc;
}

ArchSpec miniature_arch() {
    ArchWidths widths;
    widths.mlp_hidden = 8;
    return builtin_arch(ArchKind::mlp, {4}, 2, widths);  // |w| = 58
}

template <typename T>
bool tensors_equal(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.numel(); ++i)
        if (a.data()[i] != b.data()[i]) return false;
    return true;
}

}  // namespace

TEST_CASE("stage-1 instruction text is fixed") {
    CHECK(kStage1Instruction == "Please help generate parameters of neural networks.");
    auto ins = Instruction::make(std::string(kStage1Instruction));
    CHECK(detokenize(ins.ids) == kStage1Instruction);
}

TEST_CASE("stage-2 instruction follows the bracketed template") {
    CHECK(stage2_instruction("MLP", "sentiment classification", "SST-2") ==
          "Please help generate parameters of the [MLP] neural network to conduct the sentiment "
          "classification task with the [SST-2] data samples.");
}

TEST_CASE("special token bank satisfies d1*d2 >= |w|") {
    auto arch = miniature_arch();
    auto gen = make_generator<float>(miniature_config(), arch, 4);
    CHECK(gen.d1 == (arch.layout.total_len + 15) / 16);
    CHECK(gen.d1 * gen.config.d_model >= arch.layout.total_len);
    CHECK(gen.special_tokens.shape() == Shape{gen.d1, 16});
}

TEST_CASE("fresh generator emits the zero vector for any input") {
    auto arch = miniature_arch();
    auto gen = make_generator<float>(miniature_config(), arch, 4);
    auto instr = Instruction::make("any instruction at all");
    auto w = generate(gen, instr, std::optional<TensorF>{});
    CHECK(w.values.numel() == arch.layout.total_len);
    for (float v : w.values.data()) CHECK(v == 0.0f);

    Rng rng(4);
    auto ctx_input = TensorF::zeros({3, 4});
    rng.fill_normal<float>(ctx_input.mutable_data(), 0.0f, 1.0f);
    auto ctx = encode_context(gen, ctx_input);
    auto w2 = generate(gen, instr, std::optional<TensorF>(ctx));
    for (float v : w2.values.data()) CHECK(v == 0.0f);
}

TEST_CASE("generation is deterministic and output length is exactly |w|") {
    ArchWidths widths;
    std::vector<ArchSpec> archs = {builtin_arch(ArchKind::cnn3, {1, 14, 14}, 10),
                                   builtin_arch(ArchKind::mlp, {8}, 3),
                                   builtin_arch(ArchKind::mlp_text, {24}, 4, widths)};
    for (const auto& arch : archs) {
        auto gen1 = make_generator<float>(miniature_config(), arch, 0);
        auto gen2 = make_generator<float>(miniature_config(), arch, 0);
        auto instr = Instruction::make(std::string(kStage1Instruction));
        auto a = generate(gen1, instr, std::optional<TensorF>{});
        auto b = generate(gen2, instr, std::optional<TensorF>{});
        CHECK(a.values.numel() == arch.layout.total_len);
        CHECK(tensors_equal(a.values, b.values));
    }
}

TEST_CASE("with B=0 the adapted decoder equals the frozen base exactly") {
    // Fresh lora keeps B zero, so generate() must be bit-stable when the
    // non-zero lora A matrices are replaced by arbitrary values.
    auto arch = miniature_arch();
    auto gen = make_generator<float>(miniature_config(), arch, 0);
    // make the head non-trivial so any decoder change would surface
    Rng rng(12);
    rng.fill_normal<float>(gen.proj_w2.mutable_data(), 0.0f, 0.5f);
    auto instr = Instruction::make("probe");
    auto before = generate(gen, instr, std::optional<TensorF>{});
    for (auto& blk : gen.blocks) {
        rng.fill_normal<float>(blk.lora_q_a.mutable_data(), 0.0f, 10.0f);
        rng.fill_normal<float>(blk.lora_v_a.mutable_data(), 0.0f, 10.0f);
    }
    auto after = generate(gen, instr, std::optional<TensorF>{});
    CHECK(tensors_equal(before.values, after.values));
}

TEST_CASE("special rows sit last and attend to every earlier position") {
    auto mask = attention_mask_matrix<float>(6);
    const std::size_t d1 = 2, s = 6;
    // rows s-d1..s-1 are the special positions; all instruction/context
    // columns (0..s-d1-1) must be visible to them
    for (std::size_t i = s - d1; i < s; ++i)
        for (std::size_t j = 0; j < s - d1; ++j) CHECK(mask.data()[i * s + j] == 1.0f);
    // causality holds everywhere
    for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < s; ++j)
            CHECK(mask.data()[i * s + j] == (j <= i ? 1.0f : 0.0f));
}

TEST_CASE("attention inside generate honours the causal mask") {
    // Changing P must not change hidden states of earlier positions; we
    // verify indirectly: generated output depends on P, but regenerating
    // after perturbing only the *final* special row changes the output, while
    // the frozen-base path for the instruction prefix stays fixed (covered by
    // the B=0 test).  Here we check the mask matrix invariant drives the
    // kernel: a one-row change of P changes w_g.
    auto arch = miniature_arch();
    auto gen = make_generator<float>(miniature_config(), arch, 0);
    Rng rng(5);
    rng.fill_normal<float>(gen.proj_w2.mutable_data(), 0.0f, 0.5f);
    auto instr = Instruction::make("probe");
    auto before = generate(gen, instr, std::optional<TensorF>{});
    gen.special_tokens.mutable_data()[0] += 1.0f;
    auto after = generate(gen, instr, std::optional<TensorF>{});
    CHECK_FALSE(tensors_equal(before.values, after.values));
}

TEST_CASE("encode_context: image patches, zero embedder bias, frozen text table") {
    auto arch = builtin_arch(ArchKind::cnn3, {1, 14, 14}, 10);
    auto gc = miniature_config();
    gc.patch_size = 7;
    auto gen = make_generator<float>(gc, arch, 1 * 7 * 7);

    SUBCASE("14x14 with patch 7 gives 4 embeddings per sample") {
        auto img = TensorF::zeros({1, 1, 14, 14});
        auto ctx = encode_context(gen, img);
        CHECK(ctx.shape() == Shape{4, 16});
    }
    SUBCASE("all-zero image with zero bias embeds to zero") {
        auto img = TensorF::zeros({2, 1, 14, 14});
        auto ctx = encode_context(gen, img);
        for (float v : ctx.data()) CHECK(v == 0.0f);
    }
    SUBCASE("text context embeddings are stable across calls") {
        auto garch = builtin_arch(ArchKind::mlp_text, {8}, 3);
        auto tgen = make_generator<float>(miniature_config(), garch, 0);
        TokenBatch batch;
        batch.batch = 2;
        batch.len = 8;
        batch.lengths = {5, 8};
        Rng rng(3);
        for (std::size_t i = 0; i < 16; ++i) batch.ids.push_back(rng.uniform_int(0, 256));
        auto a = encode_context(tgen, batch);
        auto b = encode_context(tgen, batch);
        CHECK(a.shape() == Shape{2, 16});
        CHECK(tensors_equal(a, b));
    }
}

TEST_CASE("sequence overflow and head mismatch are rejected") {
    auto arch = miniature_arch();
    auto gc = miniature_config();
    gc.max_seq_len = 8;  // instruction alone will overflow
    auto gen = make_generator<float>(gc, arch, 0);
    auto instr = Instruction::make(std::string(kStage1Instruction));
    CHECK_THROWS_AS(generate(gen, instr, std::optional<TensorF>{}), ConfigError);

    GeneratorConfig bad = miniature_config();
    bad.n_heads = 3;  // 16 % 3 != 0
    CHECK_THROWS_AS(make_generator<float>(bad, arch, 0), ConfigError);
}

TEST_CASE("trainable parameter census matches the declared shapes") {
    auto arch = miniature_arch();
    auto gen = make_generator<float>(miniature_config(), arch, 4);
    std::size_t count = 0;
    for (auto* t : gen.trainable_parameters()) {
        CHECK(t->requires_grad());
        count += t->numel();
    }
    const std::size_t d = 16, r = 2, layers = 2;
    const std::size_t expect_p = gen.d1 * d;
    const std::size_t expect_lora = layers * 2 * (r * d + d * r);
    const std::size_t expect_theta = (d * d + d) * 2 + (d * 4 + d);  // head + patch embedder
    CHECK(count == expect_p + expect_lora + expect_theta);

    for (auto* t : gen.frozen_parameters()) CHECK_FALSE(t->requires_grad());
}

TEST_CASE("training touches only {P, lora, head}; the base stays bit-identical") {
    auto arch = miniature_arch();
    auto data = synth_blobs(2, 40, 4, 6.0, 31);
    auto gen = make_generator<float>(miniature_config(), arch, 4);

    std::vector<std::vector<float>> base_before;
    for (const auto* t : gen.frozen_parameters())
        base_before.emplace_back(t->data().begin(), t->data().end());

    TrainConfig tc;
    tc.epochs = 3;
    tc.lr = 0.05;
    auto corpus = build_corpus(arch, data, 2, 70, tc);
    StageConfig s1;
    s1.epochs = 5;
    s1.lr = 0.3;
    s1.halve_every = 0;
    s1.seed = 1;
    stage1_train(gen, corpus, s1);
    StageConfig s2;
    s2.epochs = 1;
    s2.lr = 0.05;
    s2.subset_m = 8;
    s2.seed = 2;
    auto instr = Instruction::make(stage2_instruction("MLP", "classification", "blobs"));
    stage2_train(gen, data, instr, arch, s2, SoftClipConfig{}, true);

    const auto frozen = gen.frozen_parameters();
    for (std::size_t i = 0; i < frozen.size(); ++i) {
        auto now = frozen[i]->data();
        REQUIRE(now.size() == base_before[i].size());
        for (std::size_t j = 0; j < now.size(); ++j) CHECK(now[j] == base_before[i][j]);
    }
}

TEST_CASE("end-to-end gradient: perturbing P matches finite differences") {
    ArchWidths widths;
    widths.mlp_hidden = 8;
    auto arch = builtin_arch(ArchKind::mlp, {4}, 2, widths);
    auto data = synth_blobs(2, 20, 4, 6.0, 8);

    auto gen = make_generator<double>(miniature_config(21), arch, 4);
    // non-trivial head so the loss actually depends on everything
    Rng rng(22);
    rng.fill_normal<double>(gen.proj_w2.mutable_data(), 0.0, 0.05);

    const auto rows = all_rows(data.train);
    const std::span<const std::size_t> part(rows.data(), 8);
    auto batch = dense_batch<double>(data.train, part);
    auto labels = label_batch(data.train, part);
    auto instr = Instruction::make(stage2_instruction("MLP", "classification", "blobs"));

    // loss as a function of P
    auto loss_of_p = [&](const TensorD& p) {
        GeneratorState<double> g2 = gen;  // shares every tensor except P
        g2.special_tokens = p;
        auto ctx = encode_context(g2, batch);
        auto w = generate(g2, instr, std::optional<TensorD>(ctx));
        return cross_entropy(functional_forward(arch, w, batch), labels);
    };

    // probe 20 coordinates of P
    std::vector<std::size_t> coords;
    Rng crng(23);
    for (int i = 0; i < 20; ++i)
        coords.push_back(static_cast<std::size_t>(crng.uniform_int(0, static_cast<std::int64_t>(gen.special_tokens.numel()))));
    CHECK(grad_check(loss_of_p, gen.special_tokens, 1e-5, coords) < 1e-4);
}

TEST_CASE("NGGS checkpoint round-trips and reproduces generation bit-exactly") {
    auto arch = builtin_arch(ArchKind::mlp, {6}, 3);
    auto gen = make_generator<float>(miniature_config(77), arch, 6);
    Rng rng(78);
    rng.fill_normal<float>(gen.proj_w2.mutable_data(), 0.0f, 0.3f);
    rng.fill_normal<float>(gen.special_tokens.mutable_data(), 0.0f, 0.2f);

    TempFile f("gen.nggs");
    write_nggs(f.path, gen);
    auto loaded = read_nggs(f.path);
    CHECK(loaded.d1 == gen.d1);
    CHECK(loaded.target_len == gen.target_len);
    CHECK(loaded.arch_hash == gen.arch_hash);
    CHECK(loaded.config.d_model == gen.config.d_model);

    auto instr = Instruction::make(std::string(kStage1Instruction));
    auto a = generate(gen, instr, std::optional<TensorF>{});
    auto b = generate(loaded, instr, std::optional<TensorF>{});
    CHECK(tensors_equal(a.values, b.values));

    TempFile f2("gen2.nggs");
    write_nggs(f2.path, loaded);
    CHECK(detail::read_file(f.path) == detail::read_file(f2.path));
}

TEST_CASE("adapt_generator keeps lora, resizes P, and refreshes the head") {
    auto big = builtin_arch(ArchKind::cnn3, {1, 14, 14}, 10);
    auto small = builtin_arch(ArchKind::cnn2, {1, 14, 14}, 10);
    auto gc = miniature_config(55);
    gc.patch_size = 7;
    auto gen = make_generator<float>(gc, big, 49);
    Rng rng(56);
    rng.fill_normal<float>(gen.proj_w2.mutable_data(), 0.0f, 0.2f);

    auto adapted = adapt_generator(gen, small);
    CHECK(adapted.target_len == small.layout.total_len);
    CHECK(adapted.d1 == (small.layout.total_len + 15) / 16);
    // lora carried over
    for (std::size_t l = 0; l < gen.blocks.size(); ++l)
        CHECK(tensors_equal(adapted.blocks[l].lora_q_a, gen.blocks[l].lora_q_a));
    // head is fresh: final layer zero again
    for (float v : adapted.proj_w2.data()) CHECK(v == 0.0f);
    // P reuses leading rows
    const std::size_t keep = std::min(gen.d1, adapted.d1);
    for (std::size_t i = 0; i < keep * 16; ++i)
        CHECK(adapted.special_tokens.data()[i] == gen.special_tokens.data()[i]);

    // generated length follows the new arch
    auto instr = Instruction::make(stage2_instruction("CNN", "image classification", "images"));
    auto w = generate(adapted, instr, std::optional<TensorF>{});
    CHECK(w.values.numel() == small.layout.total_len);
    CHECK_THROWS_AS(adapt_generator(gen, big), ConfigError);
}
