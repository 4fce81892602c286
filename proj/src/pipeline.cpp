// SPDX-License-Identifier: Apache-2.0
#include "neurogen/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "neurogen/serialize.hpp"
#include "neurogen/tape.hpp"

namespace ng {

namespace fs = std::filesystem;

namespace {

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string ensure_output_dir(const ExperimentConfig& config) {
    fs::create_directories(config.output_dir);
    return config.output_dir;
}

MetricsRecord make_record(const ExperimentConfig& config, const std::string& command) {
    MetricsRecord rec;
    rec.command = command;
    rec.config_hash = config.config_hash();
    rec.run_id = command + "-" + hash_hex(rec.config_hash);
    return rec;
}

double curve_final_loss(const LossCurve& curve) {
    return curve.records.empty() ? std::nan("") : curve.records.back().loss;
}

const Tensor<float>* maybe_table(const ArchSpec& arch, const ExperimentConfig& config,
                                 std::optional<Tensor<float>>& storage) {
    if (!arch.text_input) return nullptr;
    storage = target_embed_table(config, arch);
    return &*storage;
}

}  // namespace

void write_metrics(const std::string& output_dir, const MetricsRecord& record) {
    nlohmann::json j{{"run_id", record.run_id},
                     {"command", record.command},
                     {"config_hash", hash_hex(record.config_hash)},
                     {"metrics", record.metrics},
                     {"artifacts", record.artifacts}};
    std::ofstream out(fs::path(output_dir) / (record.run_id + ".metrics.json"), std::ios::trunc);
    if (!out) throw IoError(output_dir + ": cannot write metrics record");
    out << j.dump(2) << "\n";
}

CorpusResult run_build_corpus(const ExperimentConfig& config) {
    const auto arch = arch_from_config(config);
    const auto data = dataset_from_config(config);
    std::optional<Tensor<float>> table;
    const auto* table_ptr = maybe_table(arch, config, table);

    TrainConfig tc;
    tc.epochs = config.stage1.corpus_epochs;
    tc.lr = config.stage1.corpus_lr;
    tc.halve_every = 10;
    tc.batch_size = config.stage1.corpus_batch;
    const std::uint64_t base_seed = Rng(config.seed).stream("corpus").next_u64();

    CorpusResult result;
    result.corpus = build_corpus(arch, data, config.stage1.n, base_seed, tc, table_ptr);

    const std::string dir = ensure_output_dir(config);
    result.corpus_path = (fs::path(dir) / "corpus.ngpc").string();
    write_ngpc(result.corpus_path, result.corpus);

    result.record = make_record(config, "build-corpus");
    double mean_acc = 0.0;
    for (std::size_t i = 0; i < result.corpus.count(); ++i) {
        const auto& meta = result.corpus.entries[i].meta;
        result.record.metrics["entry" + std::to_string(i) + "_accuracy"] = meta.test_accuracy;
        mean_acc += meta.test_accuracy;
    }
    result.record.metrics["mean_accuracy"] = mean_acc / static_cast<double>(result.corpus.count());
    result.record.metrics["n"] = static_cast<double>(result.corpus.count());
    result.record.artifacts.push_back(result.corpus_path);
    write_metrics(dir, result.record);
    return result;
}

Stage1Result run_stage1(const ExperimentConfig& config, const std::string& corpus_path) {
    const auto arch = arch_from_config(config);
    const auto corpus = read_ngpc(corpus_path, arch);
    const auto data = dataset_from_config(config);

    auto gen = make_generator<float>(generator_from_config(config), arch,
                                     context_patch_dim(config, data));

    StageConfig sc;
    sc.epochs = config.stage1.epochs;
    sc.lr = config.stage1.lr;
    sc.halve_every = config.stage1.halve_every;
    sc.lr_scale_p = config.stage1.lr_scale_p;
    sc.lr_scale_lora = config.stage1.lr_scale_lora;
    sc.seed = Rng(config.seed).stream("stage1").next_u64();

    Stage1Result result;
    result.curve = stage1_train(gen, corpus, sc);

    const std::string dir = ensure_output_dir(config);
    result.generator_path = (fs::path(dir) / "stage1.nggs").string();
    result.curve_path = (fs::path(dir) / "stage1_curve.csv").string();
    write_nggs(result.generator_path, gen);
    write_curve_csv(result.curve_path, result.curve);

    if (corpus.count() == 1) {
        auto instr = Instruction::make(std::string(kStage1Instruction));
        auto w = generate(gen, instr, std::optional<Tensor<float>>{});
        double num = 0.0, den = 0.0;
        auto target = corpus.entries[0].params.values.data();
        for (std::size_t i = 0; i < w.values.numel(); ++i) {
            num += (w.values.data()[i] - target[i]) * (w.values.data()[i] - target[i]);
            den += static_cast<double>(target[i]) * target[i];
        }
        result.final_rel_distance = std::sqrt(num) / std::sqrt(den);
    }

    result.record = make_record(config, "stage1");
    result.record.metrics["final_loss"] = curve_final_loss(result.curve);
    result.record.metrics["epochs"] = static_cast<double>(result.curve.records.size());
    if (result.final_rel_distance >= 0)
        result.record.metrics["rel_distance_w1"] = result.final_rel_distance;
    result.record.artifacts = {result.generator_path, result.curve_path};
    write_metrics(dir, result.record);
    return result;
}

Stage2Result run_stage2(const ExperimentConfig& config, const std::string& generator_path,
                        bool phase2_only) {
    const auto arch = arch_from_config(config);
    const auto data = dataset_from_config(config);
    std::optional<Tensor<float>> table;
    const auto* table_ptr = maybe_table(arch, config, table);

    GeneratorState<float> gen =
        phase2_only ? make_generator<float>(generator_from_config(config), arch,
                                            context_patch_dim(config, data))
                    : read_nggs(generator_path);
    if (gen.arch_hash != arch.hash)
        throw ArtifactMismatch("stage2: checkpoint targets arch hash " +
                               std::to_string(gen.arch_hash) + ", config arch is '" + arch.name +
                               "' (hash " + std::to_string(arch.hash) + ")");

    StageConfig sc;
    sc.epochs = config.stage2.epochs;
    sc.lr = config.stage2.lr;
    sc.halve_every = config.stage2.halve_every;
    sc.lr_scale_p = config.stage2.lr_scale_p;
    sc.lr_scale_lora = config.stage2.lr_scale_lora;
    sc.subset_m = config.stage2.m;
    sc.seed = Rng(config.seed).stream("stage2").next_u64();

    // Phase-2-only enables the clip by default; alpha 0 runs the unclipped
    // ablation arm.  Two-stage runs never clip.
    SoftClipConfig clip;
    clip.enabled = phase2_only && config.ablation.alpha > 0;
    clip.alpha = config.ablation.alpha > 0 ? config.ablation.alpha : 1.0;

    const auto instruction = stage2_instruction_from_config(config, arch);

    Stage2Result result;
    result.curve = stage2_train(gen, data, instruction, arch, sc, clip, !phase2_only, table_ptr);

    // Final weights from the deterministic held-out context batch.
    Rng eval_rng = Rng(sc.seed).stream("stage2-evalctx");
    const DatasetHandle eval_ctx = sample_subset(data.train, sc.subset_m, eval_rng);
    const auto rows = all_rows(eval_ctx);
    auto context = (arch.text_input || eval_ctx.modality == Modality::text)
                       ? encode_context(gen, token_batch(eval_ctx, rows))
                       : encode_context(gen, dense_batch<float>(eval_ctx, rows));
    auto w = generate(gen, instruction, std::optional<Tensor<float>>(context));
    if (clip.enabled) w = soft_clip(w, clip.alpha);
    FlatParams<float> frozen{w.values.clone(), w.layout, w.arch_hash};
    frozen.values.set_requires_grad(false);

    const std::string dir = ensure_output_dir(config);
    const std::string tag = phase2_only ? "phase2only" : "stage2";
    result.generator_path = (fs::path(dir) / (tag + ".nggs")).string();
    result.weights_path = (fs::path(dir) / (tag + "_weights.ngpw")).string();
    result.curve_path = (fs::path(dir) / (tag + "_curve.csv")).string();
    write_nggs(result.generator_path, gen);
    write_ngpw(result.weights_path, frozen);
    write_curve_csv(result.curve_path, result.curve);

    result.final_accuracy = result.curve.records.back().test_acc;
    result.record = make_record(config, phase2_only ? "ablate" : "stage2");
    result.record.metrics["final_loss"] = curve_final_loss(result.curve);
    result.record.metrics["final_accuracy"] = result.final_accuracy;
    if (clip.enabled) result.record.metrics["alpha"] = clip.alpha;
    result.record.artifacts = {result.generator_path, result.weights_path, result.curve_path};
    write_metrics(dir, result.record);
    return result;
}

EvalResult run_eval(const ExperimentConfig& config, const std::string& weights_path,
                    const std::string& split) {
    const auto arch = arch_from_config(config);
    const auto data = dataset_from_config(config);
    std::optional<Tensor<float>> table;
    const auto* table_ptr = maybe_table(arch, config, table);

    const auto params = read_ngpw(weights_path, arch);
    const auto& handle = split == "train" ? data.train : data.test;

    EvalResult result;
    result.accuracy = evaluate_accuracy(arch, params, handle, table_ptr);
    result.record = make_record(config, "eval");
    result.record.metrics["accuracy"] = result.accuracy;
    result.record.artifacts = {weights_path};
    write_metrics(ensure_output_dir(config), result.record);
    return result;
}

AdaptResult run_adapt(const ExperimentConfig& config, const std::string& generator_path) {
    const auto arch_small = small_arch_from_config(config);
    const auto data = dataset_from_config(config);
    std::optional<Tensor<float>> table;
    const auto* table_ptr = maybe_table(arch_small, config, table);

    auto gen = read_nggs(generator_path);

    StageConfig sc;
    sc.epochs = config.stage2.epochs;
    sc.lr = config.stage2.lr;
    sc.halve_every = config.stage2.halve_every;
    sc.lr_scale_p = config.stage2.lr_scale_p;
    sc.lr_scale_lora = config.stage2.lr_scale_lora;
    sc.subset_m = config.stage2.m;
    sc.seed = Rng(config.seed).stream("adapt").next_u64();

    Instruction instruction =
        config.stage2.instruction_text.empty()
            ? Instruction::make(stage2_instruction(arch_small.name, "classification", config.dataset.name))
            : Instruction::make(config.stage2.instruction_text);

    AdaptResult result;
    auto [adapted, curve] = adapt_architecture(gen, arch_small, data, instruction, sc, table_ptr);
    result.generated_accuracy = curve.records.back().test_acc;

    // Matched classical baseline on the same (possibly capped) train split.
    TrainConfig tc;
    tc.epochs = config.stage2.epochs;
    tc.lr = config.stage1.corpus_lr;
    tc.halve_every = 10;
    tc.batch_size = config.stage1.corpus_batch;
    const std::uint64_t cls_seed = Rng(config.seed).stream("adapt-classical").next_u64();
    LossCurve classical_curve;
    {
        Rng root(cls_seed);
        Rng init_rng = root.stream("init");
        Rng order_rng = root.stream("order");
        ReferenceModel<float> model(arch_small, init_rng);
        auto idx = all_rows(data.train);
        for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
            const auto lr = static_cast<float>(lr_at(tc.lr, tc.halve_every, epoch));
            order_rng.shuffle(idx);
            double epoch_loss = 0.0;
            std::size_t steps = 0;
            for (std::size_t begin = 0; begin < idx.size(); begin += tc.batch_size) {
                const std::size_t end = std::min(idx.size(), begin + tc.batch_size);
                const std::span<const std::size_t> part(idx.data() + begin, end - begin);
                GradTape<float> tape;
                float loss_value;
                {
                    TapeScope<float> scope(tape);
                    Tensor<float> logits =
                        arch_small.text_input
                            ? model.forward(token_batch(data.train, part), *table_ptr)
                            : model.forward(dense_batch<float>(data.train, part));
                    auto loss = cross_entropy(logits, label_batch(data.train, part));
                    loss_value = loss.item();
                    if (!std::isfinite(loss_value))
                        throw TrainingDivergence("adapt baseline: non-finite loss at epoch " +
                                                 std::to_string(epoch));
                    tape.backward(loss);
                }
                for (auto& p : model.parameters()) {
                    const auto g = tape.grad(p);
                    auto vals = p.mutable_data();
                    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] -= lr * g[i];
                }
                epoch_loss += loss_value;
                ++steps;
            }
            classical_curve.records.push_back({epoch, epoch_loss / static_cast<double>(steps),
                                               model.accuracy(data.test, table_ptr),
                                               lr_at(tc.lr, tc.halve_every, epoch)});
        }
        result.classical_accuracy = classical_curve.records.back().test_acc;
    }

    const std::string dir = ensure_output_dir(config);
    result.generator_path = (fs::path(dir) / "adapted.nggs").string();
    result.generated_curve_path = (fs::path(dir) / "adapt_generated_curve.csv").string();
    result.classical_curve_path = (fs::path(dir) / "adapt_classical_curve.csv").string();
    write_nggs(result.generator_path, adapted);
    write_curve_csv(result.generated_curve_path, curve);
    write_curve_csv(result.classical_curve_path, classical_curve);

    result.record = make_record(config, "adapt");
    result.record.metrics["generated_accuracy"] = result.generated_accuracy;
    result.record.metrics["classical_accuracy"] = result.classical_accuracy;
    result.record.metrics["train_samples"] = static_cast<double>(data.train.size());
    result.record.artifacts = {result.generator_path, result.generated_curve_path,
                               result.classical_curve_path};
    write_metrics(dir, result.record);
    return result;
}

std::string run_report(const std::string& dir, const std::string& out_csv_path) {
    std::vector<fs::path> files;
    if (fs::exists(dir))
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.path().string().ends_with(".metrics.json")) files.push_back(entry.path());
    std::sort(files.begin(), files.end());

    std::string csv = "run_id,command,config_hash,metric,value\n";
    for (const auto& file : files) {
        std::ifstream in(file);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw IoError(file.string() + ": bad metrics record: " + e.what());
        }
        std::map<std::string, double> metrics = j.at("metrics").get<std::map<std::string, double>>();
        for (const auto& [key, value] : metrics) {
            char num[40];
            std::snprintf(num, sizeof num, "%.9g", value);
            csv += j.at("run_id").get<std::string>() + "," + j.at("command").get<std::string>() + "," +
                   j.at("config_hash").get<std::string>() + "," + key + "," + num + "\n";
        }
    }
    std::ofstream out(out_csv_path, std::ios::trunc);
    if (!out) throw IoError(out_csv_path + ": cannot open for writing");
    out << csv;
    return csv;
}

}  // namespace ng
