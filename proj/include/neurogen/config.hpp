// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>

#include "neurogen/archspec.hpp"
#include "neurogen/generator.hpp"
#include "neurogen/refcorpus.hpp"
#include "neurogen/training.hpp"

namespace ng {

// Schema-validated experiment description.  Unknown keys anywhere in the
// document are rejected with their JSON path.  All randomness flows from
// `seed` through named sub-streams, so any command is reproducible from the
// config alone.
struct ExperimentConfig {
    struct Arch {
        std::string kind = "mlp";
        Shape input_shape;
        std::size_t classes = 2;
        ArchWidths widths;
    } arch;

    struct Blobs {
        std::size_t classes = 3;
        std::size_t per_class = 500;
        std::size_t dim = 8;
        double separation = 6.0;
    };

    struct DatasetCfg {
        std::string source = "blobs";  // blobs | idx | csv
        Blobs blobs;
        std::string train_images, train_labels, test_images, test_labels;  // idx
        std::string train_csv, test_csv;                                   // csv
        std::optional<std::size_t> downsample;
        std::size_t max_len = 64;       // csv token length
        std::size_t limit = 0;          // cap on train samples, 0 = all
        std::string name = "dataset";   // label used in instructions
    } dataset;

    struct Generator {
        std::size_t d_model = 128;
        std::size_t layers = 4;
        std::size_t heads = 4;
        std::size_t max_seq_len = 1024;
        std::size_t lora_rank = 8;
        double lora_scale = 16.0;
        std::size_t patch_size = 7;
        std::optional<std::uint64_t> seed;  // defaults to a stream of the root seed
    } generator;

    struct Stage1 {
        std::size_t epochs = 30;
        double lr = 1e-3;
        std::size_t halve_every = 10;
        double lr_scale_p = 1.0;
        double lr_scale_lora = 1.0;
        std::size_t n = 8;  // corpus size
        std::size_t corpus_epochs = 30;
        double corpus_lr = 1e-3;
        std::size_t corpus_batch = 64;
    } stage1;

    struct Stage2 {
        std::size_t epochs = 20;
        double lr = 1e-3;
        std::size_t halve_every = 10;
        double lr_scale_p = 1.0;
        double lr_scale_lora = 1.0;
        std::size_t m = 32;
        std::string instruction_text;  // empty: built from the template
    } stage2;

    struct Ablation {
        bool phase2_only = false;
        double alpha = 0.5;
    } ablation;

    struct Adapt {
        std::string small_arch;  // arch kind for stage-2-only adaptation
    } adapt;

    std::uint64_t seed = 0;
    std::string output_dir = "out";

    std::uint64_t config_hash() const;
    std::string canonical_json() const;
};

ExperimentConfig parse_config_json(const std::string& json_text);
ExperimentConfig load_config_file(const std::string& path);

ArchSpec arch_from_config(const ExperimentConfig& config);
ArchSpec small_arch_from_config(const ExperimentConfig& config);
Dataset dataset_from_config(const ExperimentConfig& config);
GeneratorConfig generator_from_config(const ExperimentConfig& config);
Instruction stage2_instruction_from_config(const ExperimentConfig& config, const ArchSpec& arch);

// Flattened patch width the context embedder needs for this experiment; 0
// for token datasets.
std::size_t context_patch_dim(const ExperimentConfig& config, const Dataset& data);

// Frozen target-network embedding table for text targets (shared verbatim by
// classical baselines and generated models).
Tensor<float> target_embed_table(const ExperimentConfig& config, const ArchSpec& arch);

}  // namespace ng
