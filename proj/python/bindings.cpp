// SPDX-License-Identifier: Apache-2.0
//
// Python surface over the core operations: experiment pipeline commands,
// architecture/layout introspection, dataset loaders, weight-file io, and a
// few numeric utilities.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "neurogen/pipeline.hpp"
#include "neurogen/schedule.hpp"
#include "neurogen/serialize.hpp"

namespace py = pybind11;
using namespace ng;

namespace {

py::array_t<float> to_numpy(std::span<const float> values) {
    py::array_t<float> out(static_cast<py::ssize_t>(values.size()));
    std::memcpy(out.mutable_data(), values.data(), values.size() * sizeof(float));
    return out;
}

std::vector<float> from_numpy(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    return {a.data(), a.data() + a.size()};
}

py::dict record_to_dict(const MetricsRecord& rec) {
    py::dict metrics;
    for (const auto& [k, v] : rec.metrics) metrics[py::str(k)] = v;
    py::dict out;
    out["run_id"] = rec.run_id;
    out["command"] = rec.command;
    out["metrics"] = metrics;
    out["artifacts"] = rec.artifacts;
    return out;
}

}  // namespace

PYBIND11_MODULE(_neurogen, m) {
    m.doc() = "Conditioned decoder that emits flat parameter vectors for small target networks";

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<TrainingDivergence>(m, "TrainingDivergence");
    py::register_exception<ArtifactMismatch>(m, "ArtifactMismatch");
    py::register_exception<UnboundedLogits>(m, "UnboundedLogits");
    py::register_exception<ShapeError>(m, "ShapeError");
    py::register_exception<IoError>(m, "IoError");

    py::class_<ExperimentConfig>(m, "ExperimentConfig")
        .def_static("from_json", &parse_config_json, py::arg("text"))
        .def_static("from_file", &load_config_file, py::arg("path"))
        .def_property_readonly("seed", [](const ExperimentConfig& c) { return c.seed; })
        .def_property_readonly("output_dir", [](const ExperimentConfig& c) { return c.output_dir; })
        .def("canonical_json", &ExperimentConfig::canonical_json)
        .def("config_hash", &ExperimentConfig::config_hash);

    py::class_<ArchSpec>(m, "ArchSpec")
        .def_property_readonly("name", [](const ArchSpec& a) { return a.name; })
        .def_property_readonly("param_count", [](const ArchSpec& a) { return a.layout.total_len; })
        .def_property_readonly("hash", [](const ArchSpec& a) { return a.hash; })
        .def_property_readonly("num_classes", [](const ArchSpec& a) { return a.num_classes; })
        .def("canonical", &ArchSpec::canonical)
        .def("segments", [](const ArchSpec& a) {
            py::list out;
            for (const auto& seg : a.layout.segments) {
                py::dict d;
                d["layer"] = seg.layer_index;
                d["role"] = std::string(param_role_name(seg.role));
                d["shape"] = seg.shape;
                d["offset"] = seg.offset;
                d["length"] = seg.length;
                out.append(d);
            }
            return out;
        });

    m.def(
        "builtin_arch",
        [](const std::string& kind, const Shape& input_shape, std::size_t classes) {
            return builtin_arch(arch_kind_from_name(kind), input_shape, classes);
        },
        py::arg("kind"), py::arg("input_shape"), py::arg("classes"),
        "Validated builtin architecture (cnn3, cnn2, lenet, mlp, mlp_text, rnn_text)");

    m.def("arch_from_config", &arch_from_config, py::arg("config"));

    // pipeline commands; each writes its artifacts and metrics record
    m.def("build_corpus",
          [](const ExperimentConfig& cfg) {
              auto result = run_build_corpus(cfg);
              auto out = record_to_dict(result.record);
              out["corpus_path"] = result.corpus_path;
              return out;
          },
          py::arg("config"));
    m.def("stage1",
          [](const ExperimentConfig& cfg, const std::string& corpus_path) {
              auto result = run_stage1(cfg, corpus_path);
              auto out = record_to_dict(result.record);
              out["generator_path"] = result.generator_path;
              out["curve_path"] = result.curve_path;
              return out;
          },
          py::arg("config"), py::arg("corpus_path"));
    m.def("stage2",
          [](const ExperimentConfig& cfg, const std::string& generator_path, bool phase2_only) {
              auto result = run_stage2(cfg, generator_path, phase2_only);
              auto out = record_to_dict(result.record);
              out["generator_path"] = result.generator_path;
              out["weights_path"] = result.weights_path;
              out["curve_path"] = result.curve_path;
              out["final_accuracy"] = result.final_accuracy;
              return out;
          },
          py::arg("config"), py::arg("generator_path") = "", py::arg("phase2_only") = false);
    m.def("evaluate",
          [](const ExperimentConfig& cfg, const std::string& weights_path, const std::string& split) {
              return run_eval(cfg, weights_path, split).accuracy;
          },
          py::arg("config"), py::arg("weights_path"), py::arg("split") = "test");
    m.def("adapt",
          [](const ExperimentConfig& cfg, const std::string& generator_path) {
              auto result = run_adapt(cfg, generator_path);
              auto out = record_to_dict(result.record);
              out["generator_path"] = result.generator_path;
              out["generated_accuracy"] = result.generated_accuracy;
              out["classical_accuracy"] = result.classical_accuracy;
              return out;
          },
          py::arg("config"), py::arg("generator_path"));
    m.def("report", &run_report, py::arg("dir"), py::arg("out_csv_path"));

    // weight files
    m.def(
        "read_weights",
        [](const std::string& path, const ArchSpec& arch) {
            return to_numpy(read_ngpw(path, arch).values.data());
        },
        py::arg("path"), py::arg("arch"));
    m.def(
        "write_weights",
        [](const std::string& path, const ArchSpec& arch,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& values) {
            auto v = from_numpy(values);
            if (v.size() != arch.layout.total_len)
                throw ShapeError("write_weights: expected " + std::to_string(arch.layout.total_len) +
                                 " values, got " + std::to_string(v.size()));
            const std::size_t n = v.size();
            write_ngpw(path, {Tensor<float>::from_data({n}, std::move(v)), arch.layout, arch.hash});
        },
        py::arg("path"), py::arg("arch"), py::arg("values"));

    // generation from a saved checkpoint (no-context path)
    m.def(
        "generate_weights",
        [](const std::string& generator_path, const std::string& instruction_text) {
            auto gen = read_nggs(generator_path);
            auto instr = Instruction::make(instruction_text);
            auto w = generate(gen, instr, std::optional<Tensor<float>>{});
            return to_numpy(w.values.data());
        },
        py::arg("generator_path"), py::arg("instruction_text") = std::string(kStage1Instruction));

    // utilities
    m.def("tokenize", [](const std::string& text) { return tokenize(text); }, py::arg("text"));
    m.def("detokenize", &detokenize, py::arg("ids"));
    m.def("lr_at", &lr_at, py::arg("initial"), py::arg("halve_every"), py::arg("epoch"));
    m.def(
        "soft_clip",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& values, double alpha) {
            auto v = from_numpy(values);
            const std::size_t n = v.size();
            FlatParams<float> w{Tensor<float>::from_data({n}, std::move(v)), {}, 0};
            return to_numpy(soft_clip(w, alpha).values.data());
        },
        py::arg("values"), py::arg("alpha"));
    m.attr("STAGE1_INSTRUCTION") = std::string(kStage1Instruction);
    m.def("stage2_instruction", &stage2_instruction, py::arg("nn_name"), py::arg("task"),
          py::arg("dataset_name"));

    m.attr("__version__") = "0.1.0";
}
