// SPDX-License-Identifier: Apache-2.0
#include "neurogen/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "neurogen/functional.hpp"

namespace ng {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.contains(key))
            throw ConfigError("config: unknown key " + where + "/" + key);
    }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config: bad value for " + std::string(key) + ": " + e.what());
    }
}

}  // namespace

ExperimentConfig parse_config_json(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("config: document must be a JSON object");
    reject_unknown(root, {"arch", "dataset", "generator", "stage1", "stage2", "ablation", "adapt",
                          "seed", "output_dir"},
                   "");

    ExperimentConfig cfg;
    read_field(root, "seed", cfg.seed);
    read_field(root, "output_dir", cfg.output_dir);

    if (root.contains("arch")) {
        const auto& a = root["arch"];
        reject_unknown(a, {"kind", "input_shape", "classes", "widths"}, "/arch");
        read_field(a, "kind", cfg.arch.kind);
        read_field(a, "input_shape", cfg.arch.input_shape);
        read_field(a, "classes", cfg.arch.classes);
        if (a.contains("widths")) {
            const auto& w = a["widths"];
            reject_unknown(w, {"conv_channels", "mlp_hidden", "rnn_hidden", "embed_dim", "vocab"},
                           "/arch/widths");
            read_field(w, "conv_channels", cfg.arch.widths.conv_channels);
            read_field(w, "mlp_hidden", cfg.arch.widths.mlp_hidden);
            read_field(w, "rnn_hidden", cfg.arch.widths.rnn_hidden);
            read_field(w, "embed_dim", cfg.arch.widths.embed_dim);
            read_field(w, "vocab", cfg.arch.widths.vocab);
        }
    }
    if (root.contains("dataset")) {
        const auto& d = root["dataset"];
        reject_unknown(d,
                       {"source", "blobs", "train_images", "train_labels", "test_images",
                        "test_labels", "train_csv", "test_csv", "downsample", "max_len", "limit",
                        "name"},
                       "/dataset");
        read_field(d, "source", cfg.dataset.source);
        read_field(d, "train_images", cfg.dataset.train_images);
        read_field(d, "train_labels", cfg.dataset.train_labels);
        read_field(d, "test_images", cfg.dataset.test_images);
        read_field(d, "test_labels", cfg.dataset.test_labels);
        read_field(d, "train_csv", cfg.dataset.train_csv);
        read_field(d, "test_csv", cfg.dataset.test_csv);
        if (d.contains("downsample")) cfg.dataset.downsample = d.at("downsample").get<std::size_t>();
        read_field(d, "max_len", cfg.dataset.max_len);
        read_field(d, "limit", cfg.dataset.limit);
        read_field(d, "name", cfg.dataset.name);
        if (d.contains("blobs")) {
            const auto& b = d["blobs"];
            reject_unknown(b, {"classes", "per_class", "dim", "separation"}, "/dataset/blobs");
            read_field(b, "classes", cfg.dataset.blobs.classes);
            read_field(b, "per_class", cfg.dataset.blobs.per_class);
            read_field(b, "dim", cfg.dataset.blobs.dim);
            read_field(b, "separation", cfg.dataset.blobs.separation);
        }
        if (cfg.dataset.source != "blobs" && cfg.dataset.source != "idx" && cfg.dataset.source != "csv")
            throw ConfigError("config: /dataset/source must be blobs, idx, or csv");
        if (cfg.dataset.source == "idx" &&
            (cfg.dataset.train_images.empty() || cfg.dataset.train_labels.empty() ||
             cfg.dataset.test_images.empty() || cfg.dataset.test_labels.empty()))
            throw ConfigError("config: /dataset requires train/test images+labels paths for source idx");
        if (cfg.dataset.source == "csv" && (cfg.dataset.train_csv.empty() || cfg.dataset.test_csv.empty()))
            throw ConfigError("config: /dataset requires train_csv and test_csv for source csv");
    }
    if (root.contains("generator")) {
        const auto& g = root["generator"];
        reject_unknown(g,
                       {"d_model", "layers", "heads", "max_seq_len", "lora_rank", "lora_scale",
                        "patch_size", "seed"},
                       "/generator");
        read_field(g, "d_model", cfg.generator.d_model);
        read_field(g, "layers", cfg.generator.layers);
        read_field(g, "heads", cfg.generator.heads);
        read_field(g, "max_seq_len", cfg.generator.max_seq_len);
        read_field(g, "lora_rank", cfg.generator.lora_rank);
        read_field(g, "lora_scale", cfg.generator.lora_scale);
        read_field(g, "patch_size", cfg.generator.patch_size);
        if (g.contains("seed")) cfg.generator.seed = g.at("seed").get<std::uint64_t>();
    }
    if (root.contains("stage1")) {
        const auto& s = root["stage1"];
        reject_unknown(s, {"epochs", "lr", "halve_every", "lr_scale_p", "lr_scale_lora", "N",
                        "corpus_epochs", "corpus_lr", "corpus_batch"},
                       "/stage1");
        read_field(s, "epochs", cfg.stage1.epochs);
        read_field(s, "lr", cfg.stage1.lr);
        read_field(s, "halve_every", cfg.stage1.halve_every);
        read_field(s, "lr_scale_p", cfg.stage1.lr_scale_p);
        read_field(s, "lr_scale_lora", cfg.stage1.lr_scale_lora);
        read_field(s, "N", cfg.stage1.n);
        read_field(s, "corpus_epochs", cfg.stage1.corpus_epochs);
        read_field(s, "corpus_lr", cfg.stage1.corpus_lr);
        read_field(s, "corpus_batch", cfg.stage1.corpus_batch);
    }
    if (root.contains("stage2")) {
        const auto& s = root["stage2"];
        reject_unknown(s, {"epochs", "lr", "halve_every", "lr_scale_p", "lr_scale_lora", "m",
                        "instruction_text"}, "/stage2");
        read_field(s, "epochs", cfg.stage2.epochs);
        read_field(s, "lr", cfg.stage2.lr);
        read_field(s, "halve_every", cfg.stage2.halve_every);
        read_field(s, "lr_scale_p", cfg.stage2.lr_scale_p);
        read_field(s, "lr_scale_lora", cfg.stage2.lr_scale_lora);
        read_field(s, "m", cfg.stage2.m);
        read_field(s, "instruction_text", cfg.stage2.instruction_text);
    }
    if (root.contains("ablation")) {
        const auto& a = root["ablation"];
        reject_unknown(a, {"phase2_only", "alpha"}, "/ablation");
        read_field(a, "phase2_only", cfg.ablation.phase2_only);
        read_field(a, "alpha", cfg.ablation.alpha);
        // alpha 0 disables the clip (the unbounded ablation arm)
        if (cfg.ablation.alpha < 0) throw ConfigError("config: /ablation/alpha must be >= 0");
    }
    if (root.contains("adapt")) {
        const auto& a = root["adapt"];
        reject_unknown(a, {"small_arch"}, "/adapt");
        read_field(a, "small_arch", cfg.adapt.small_arch);
    }

    if (cfg.stage1.epochs < 1 || cfg.stage2.epochs < 1)
        throw ConfigError("config: stage epochs must be >= 1");
    if (cfg.stage1.lr <= 0 || cfg.stage2.lr <= 0) throw ConfigError("config: lr must be > 0");
    if (cfg.stage2.m < 1) throw ConfigError("config: /stage2/m must be >= 1");
    if (cfg.stage1.n < 1) throw ConfigError("config: /stage1/N must be >= 1");
    if (cfg.arch.input_shape.empty()) throw ConfigError("config: /arch/input_shape is required");
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config_json(text);
}

std::string ExperimentConfig::canonical_json() const {
    json widths{{"conv_channels", arch.widths.conv_channels},
                {"mlp_hidden", arch.widths.mlp_hidden},
                {"rnn_hidden", arch.widths.rnn_hidden},
                {"embed_dim", arch.widths.embed_dim},
                {"vocab", arch.widths.vocab}};
    json d{{"source", dataset.source},
           {"blobs",
            {{"classes", dataset.blobs.classes},
             {"per_class", dataset.blobs.per_class},
             {"dim", dataset.blobs.dim},
             {"separation", dataset.blobs.separation}}},
           {"train_images", dataset.train_images},
           {"train_labels", dataset.train_labels},
           {"test_images", dataset.test_images},
           {"test_labels", dataset.test_labels},
           {"train_csv", dataset.train_csv},
           {"test_csv", dataset.test_csv},
           {"max_len", dataset.max_len},
           {"limit", dataset.limit},
           {"name", dataset.name}};
    if (dataset.downsample) d["downsample"] = *dataset.downsample;
    json g{{"d_model", generator.d_model},   {"layers", generator.layers},
           {"heads", generator.heads},       {"max_seq_len", generator.max_seq_len},
           {"lora_rank", generator.lora_rank}, {"lora_scale", generator.lora_scale},
           {"patch_size", generator.patch_size}};
    if (generator.seed) g["seed"] = *generator.seed;
    const json root{{"arch",
                     {{"kind", arch.kind}, {"input_shape", arch.input_shape}, {"classes", arch.classes}, {"widths", widths}}},
                    {"dataset", d},
                    {"generator", g},
                    {"stage1",
                     {{"epochs", stage1.epochs},
                      {"lr", stage1.lr},
                      {"halve_every", stage1.halve_every},
                      {"lr_scale_p", stage1.lr_scale_p},
                      {"lr_scale_lora", stage1.lr_scale_lora},
                      {"N", stage1.n},
                      {"corpus_epochs", stage1.corpus_epochs},
                      {"corpus_lr", stage1.corpus_lr},
                      {"corpus_batch", stage1.corpus_batch}}},
                    {"stage2",
                     {{"epochs", stage2.epochs},
                      {"lr", stage2.lr},
                      {"halve_every", stage2.halve_every},
                      {"lr_scale_p", stage2.lr_scale_p},
                      {"lr_scale_lora", stage2.lr_scale_lora},
                      {"m", stage2.m},
                      {"instruction_text", stage2.instruction_text}}},
                    {"ablation", {{"phase2_only", ablation.phase2_only}, {"alpha", ablation.alpha}}},
                    {"adapt", {{"small_arch", adapt.small_arch}}},
                    {"seed", seed},
                    {"output_dir", output_dir}};
    return root.dump();
}

std::uint64_t ExperimentConfig::config_hash() const { return fnv1a64(canonical_json()); }

ArchSpec arch_from_config(const ExperimentConfig& config) {
    return builtin_arch(arch_kind_from_name(config.arch.kind), config.arch.input_shape,
                        config.arch.classes, config.arch.widths);
}

ArchSpec small_arch_from_config(const ExperimentConfig& config) {
    if (config.adapt.small_arch.empty())
        throw ConfigError("config: /adapt/small_arch is required for adaptation");
    return builtin_arch(arch_kind_from_name(config.adapt.small_arch), config.arch.input_shape,
                        config.arch.classes, config.arch.widths);
}

Dataset dataset_from_config(const ExperimentConfig& config) {
    Dataset data;
    const auto& d = config.dataset;
    if (d.source == "blobs") {
        data = synth_blobs(d.blobs.classes, d.blobs.per_class, d.blobs.dim, d.blobs.separation,
                           Rng(config.seed).stream("data").next_u64());
    } else if (d.source == "idx") {
        data.train = load_idx(d.train_images, d.train_labels, d.downsample, "train", config.arch.classes);
        data.test = load_idx(d.test_images, d.test_labels, d.downsample, "test", config.arch.classes);
    } else {
        data.train = load_text_csv(d.train_csv, d.max_len, "train", config.arch.classes);
        data.test = load_text_csv(d.test_csv, d.max_len, "test", config.arch.classes);
    }
    if (d.limit > 0 && d.limit < data.train.size()) {
        Rng rng = Rng(config.seed).stream("limit");
        data.train = sample_subset(data.train, d.limit, rng);
    }
    return data;
}

GeneratorConfig generator_from_config(const ExperimentConfig& config) {
    GeneratorConfig gc;
    gc.d_model = config.generator.d_model;
    gc.n_layers = config.generator.layers;
    gc.n_heads = config.generator.heads;
    gc.max_seq_len = config.generator.max_seq_len;
    gc.lora_rank = config.generator.lora_rank;
    gc.lora_scale = config.generator.lora_scale;
    gc.patch_size = config.generator.patch_size;
    gc.seed = config.generator.seed ? *config.generator.seed
                                    : Rng(config.seed).stream("generator").next_u64();
    return gc;
}

Instruction stage2_instruction_from_config(const ExperimentConfig& config, const ArchSpec& arch) {
    if (!config.stage2.instruction_text.empty())
        return Instruction::make(config.stage2.instruction_text);
    return Instruction::make(
        stage2_instruction(arch.name, "classification", config.dataset.name));
}

std::size_t context_patch_dim(const ExperimentConfig& config, const Dataset& data) {
    if (data.train.modality == Modality::text) return 0;
    const auto& shape = data.train.input_shape;
    if (shape.size() == 1) return shape[0];
    const std::size_t p = config.generator.patch_size;
    return shape[0] * p * p;
}

Tensor<float> target_embed_table(const ExperimentConfig& config, const ArchSpec& arch) {
    if (!arch.text_input) throw ConfigError("target_embed_table: arch has no embedding layer");
    const auto& emb = arch.layers.front();
    return make_frozen_table<float>(emb.vocab, emb.embed_dim,
                                    Rng(config.seed).stream("embed-table").next_u64());
}

}  // namespace ng
