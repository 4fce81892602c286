// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>

#include "neurogen/config.hpp"

namespace ng {

// One record per completed run, written exactly once into output_dir as
// <run_id>.metrics.json.  run_id derives from (command, config hash), so
// reruns of the same config overwrite with identical bytes.
struct MetricsRecord {
    std::string run_id;
    std::string command;
    std::uint64_t config_hash = 0;
    std::map<std::string, double> metrics;
    std::vector<std::string> artifacts;
};

void write_metrics(const std::string& output_dir, const MetricsRecord& record);

struct CorpusResult {
    std::string corpus_path;
    CheckpointCorpus corpus;
    MetricsRecord record;
};

struct Stage1Result {
    std::string generator_path;
    std::string curve_path;
    LossCurve curve;
    double final_rel_distance = -1.0;  // to w_1, reported for N=1 corpora
    MetricsRecord record;
};

struct Stage2Result {
    std::string generator_path;
    std::string weights_path;
    std::string curve_path;
    LossCurve curve;
    double final_accuracy = 0.0;
    MetricsRecord record;
};

struct EvalResult {
    double accuracy = 0.0;
    MetricsRecord record;
};

struct AdaptResult {
    std::string generator_path;
    std::string generated_curve_path;
    std::string classical_curve_path;
    double generated_accuracy = 0.0;
    double classical_accuracy = 0.0;
    MetricsRecord record;
};

CorpusResult run_build_corpus(const ExperimentConfig& config);

Stage1Result run_stage1(const ExperimentConfig& config, const std::string& corpus_path);

// phase2_only skips the stage-1 checkpoint and starts from a fresh generator;
// soft clip follows config.ablation.  generator_path is ignored in that mode.
Stage2Result run_stage2(const ExperimentConfig& config, const std::string& generator_path,
                        bool phase2_only);

EvalResult run_eval(const ExperimentConfig& config, const std::string& weights_path,
                    const std::string& split = "test");

AdaptResult run_adapt(const ExperimentConfig& config, const std::string& generator_path);

// Aggregates every *.metrics.json under dir into one CSV
// (run_id,command,config_hash,metric,value), sorted for determinism.
std::string run_report(const std::string& dir, const std::string& out_csv_path);

}  // namespace ng
