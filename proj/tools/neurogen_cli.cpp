// SPDX-License-Identifier: Apache-2.0
//
// Batch front end: build-corpus, stage1, stage2, eval, ablate, adapt, report.
// Outputs are files under the config's output_dir; exit codes are
// 0 success, 2 config, 3 training divergence, 4 artifact mismatch,
// 5 unbounded-logit ablation failure.

#include <cstdio>
#include <exception>

#include <CLI11.hpp>

#include "neurogen/pipeline.hpp"
#include "neurogen/serialize.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output_dir;
    std::optional<std::size_t> limit;
};

ng::ExperimentConfig load(const CommonOpts& opts) {
    auto cfg = ng::load_config_file(opts.config_path);
    if (opts.seed) cfg.seed = *opts.seed;
    if (opts.output_dir) cfg.output_dir = *opts.output_dir;
    if (opts.limit) cfg.dataset.limit = *opts.limit;
    return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("-c,--config", opts.config_path, "experiment config JSON")->required();
    cmd->add_option("--seed", opts.seed, "override the config seed");
    cmd->add_option("--output-dir", opts.output_dir, "override the output directory");
    cmd->add_option("--limit", opts.limit, "cap the number of training samples");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"neurogen: conditioned generation of target-network parameters"};
    app.require_subcommand(1);

    CommonOpts corpus_opts;
    auto* cmd_corpus = app.add_subcommand("build-corpus", "train N seeded reference checkpoints");
    add_common(cmd_corpus, corpus_opts);

    CommonOpts s1_opts;
    std::string s1_corpus;
    auto* cmd_s1 = app.add_subcommand("stage1", "parameter-reference alignment");
    add_common(cmd_s1, s1_opts);
    cmd_s1->add_option("--corpus", s1_corpus, "NGPC corpus path")->required();

    CommonOpts s2_opts;
    std::string s2_generator;
    bool s2_phase2_only = false;
    std::optional<double> s2_alpha;
    std::optional<std::size_t> s2_epochs;
    auto* cmd_s2 = app.add_subcommand("stage2", "context-enhanced instruction tuning");
    add_common(cmd_s2, s2_opts);
    cmd_s2->add_option("--generator", s2_generator, "stage-1 NGGS checkpoint");
    cmd_s2->add_flag("--phase2-only", s2_phase2_only, "skip the stage-1 checkpoint");
    cmd_s2->add_option("--alpha", s2_alpha, "soft-clip scale for phase-2-only (0 disables)");
    cmd_s2->add_option("--epochs", s2_epochs, "override stage-2 epochs");

    CommonOpts ab_opts;
    std::optional<double> ab_alpha;
    std::optional<std::size_t> ab_epochs;
    auto* cmd_ablate = app.add_subcommand("ablate", "alias of stage2 --phase2-only");
    add_common(cmd_ablate, ab_opts);
    cmd_ablate->add_option("--alpha", ab_alpha, "soft-clip scale (0 disables)");
    cmd_ablate->add_option("--epochs", ab_epochs, "override stage-2 epochs");

    CommonOpts eval_opts;
    std::string eval_weights, eval_split = "test";
    auto* cmd_eval = app.add_subcommand("eval", "accuracy of an NGPW weights file");
    add_common(cmd_eval, eval_opts);
    cmd_eval->add_option("--weights", eval_weights, "NGPW path")->required();
    cmd_eval->add_option("--split", eval_split, "train or test")->check(CLI::IsMember({"train", "test"}));

    CommonOpts adapt_opts;
    std::string adapt_generator;
    auto* cmd_adapt = app.add_subcommand("adapt", "stage-2-only adaptation to a smaller arch");
    add_common(cmd_adapt, adapt_opts);
    cmd_adapt->add_option("--generator", adapt_generator, "trained NGGS checkpoint")->required();

    std::string report_dir, report_out = "report.csv";
    auto* cmd_report = app.add_subcommand("report", "aggregate metrics records into one CSV");
    cmd_report->add_option("--dir", report_dir, "directory of *.metrics.json")->required();
    cmd_report->add_option("--out", report_out, "output CSV path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*cmd_corpus) {
            auto result = ng::run_build_corpus(load(corpus_opts));
            std::printf("corpus: %s (N=%zu, mean accuracy %.4f)\n", result.corpus_path.c_str(),
                        result.corpus.count(), result.record.metrics.at("mean_accuracy"));
        } else if (*cmd_s1) {
            auto result = ng::run_stage1(load(s1_opts), s1_corpus);
            std::printf("stage1: %s (final loss %.6g)\n", result.generator_path.c_str(),
                        result.record.metrics.at("final_loss"));
            if (result.final_rel_distance >= 0)
                std::printf("stage1: relative distance to w_1 = %.4f\n", result.final_rel_distance);
        } else if (*cmd_s2) {
            auto cfg = load(s2_opts);
            if (s2_alpha) cfg.ablation.alpha = *s2_alpha;
            if (s2_epochs) cfg.stage2.epochs = *s2_epochs;
            if (!s2_phase2_only && s2_generator.empty())
                throw ng::ConfigError("stage2: --generator is required unless --phase2-only");
            auto result = ng::run_stage2(cfg, s2_generator, s2_phase2_only);
            std::printf("stage2: %s (accuracy %.4f)\n", result.weights_path.c_str(),
                        result.final_accuracy);
        } else if (*cmd_ablate) {
            auto cfg = load(ab_opts);
            if (ab_alpha) cfg.ablation.alpha = *ab_alpha;
            if (ab_epochs) cfg.stage2.epochs = *ab_epochs;
            cfg.ablation.phase2_only = true;
            auto result = ng::run_stage2(cfg, "", /*phase2_only=*/true);
            std::printf("ablate: %s (accuracy %.4f)\n", result.weights_path.c_str(),
                        result.final_accuracy);
        } else if (*cmd_eval) {
            auto result = ng::run_eval(load(eval_opts), eval_weights, eval_split);
            std::printf("%.4f\n", result.accuracy);
        } else if (*cmd_adapt) {
            auto result = ng::run_adapt(load(adapt_opts), adapt_generator);
            std::printf("adapt: generated %.4f vs classical %.4f\n", result.generated_accuracy,
                        result.classical_accuracy);
        } else if (*cmd_report) {
            ng::run_report(report_dir, report_out);
            std::printf("report: %s\n", report_out.c_str());
        }
    } catch (const ng::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const ng::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 2;
    } catch (const ng::TrainingDivergence& e) {
        std::fprintf(stderr, "training diverged: %s\n", e.what());
        return 3;
    } catch (const ng::ArtifactMismatch& e) {
        std::fprintf(stderr, "artifact mismatch: %s\n", e.what());
        return 4;
    } catch (const ng::UnboundedLogits& e) {
        std::fprintf(stderr, "unbounded logits: %s\n", e.what());
        return 5;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
