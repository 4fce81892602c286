# SPDX-License-Identifier: Apache-2.0
"""End-to-end smoke tests for the Python module, runnable as a plain script."""

import json
import os
import shutil
import tempfile

import neurogen as ng


def mini_config(out_dir: str, seed: int = 7) -> "ng.ExperimentConfig":
    doc = {
        "arch": {"kind": "mlp", "input_shape": [4], "classes": 2, "widths": {"mlp_hidden": 8}},
        "dataset": {
            "source": "blobs",
            "name": "blobs",
            "blobs": {"classes": 2, "per_class": 40, "dim": 4, "separation": 6.0},
        },
        "generator": {
            "d_model": 16,
            "layers": 2,
            "heads": 2,
            "max_seq_len": 256,
            "lora_rank": 2,
            "lora_scale": 4.0,
            "patch_size": 2,
        },
        "stage1": {
            "epochs": 20,
            "lr": 0.5,
            "halve_every": 0,
            "N": 2,
            "corpus_epochs": 8,
            "corpus_lr": 0.05,
            "corpus_batch": 32,
        },
        "stage2": {"epochs": 2, "lr": 0.05, "halve_every": 10, "m": 16},
        "seed": seed,
        "output_dir": out_dir,
    }
    return ng.ExperimentConfig.from_json(json.dumps(doc))


def test_arch_introspection():
    arch = ng.builtin_arch("cnn3", [1, 14, 14], 10)
    assert arch.param_count == 6218
    segs = arch.segments()
    assert segs[0]["shape"] == [8, 1, 3, 3]
    assert sum(s["length"] for s in segs) == arch.param_count

    mlp = ng.builtin_arch("mlp_text", [24], 4)
    assert mlp.param_count == 2372


def test_tokenizer_roundtrip():
    text = ng.STAGE1_INSTRUCTION
    assert text == "Please help generate parameters of neural networks."
    assert ng.detokenize(ng.tokenize(text)) == text
    template = ng.stage2_instruction("MLP", "sentiment classification", "SST-2")
    assert template.startswith("Please help generate parameters of the [MLP]")


def test_lr_schedule_and_soft_clip():
    import numpy as np

    assert ng.lr_at(1e-3, 10, 0) == 1e-3
    assert ng.lr_at(1e-3, 10, 25) == 2.5e-4
    clipped = ng.soft_clip(np.array([0.0, 100.0, -100.0], dtype=np.float32), 0.5)
    assert clipped[0] == 0.0
    assert abs(clipped[1]) <= 0.5 and abs(clipped[2]) <= 0.5


def test_pipeline_end_to_end():
    out = tempfile.mkdtemp(prefix="ng_py_smoke_")
    try:
        cfg = mini_config(out)
        corpus = ng.build_corpus(cfg)
        assert corpus["metrics"]["mean_accuracy"] >= 0.9
        s1 = ng.stage1(cfg, corpus["corpus_path"])
        assert os.path.exists(s1["generator_path"])
        s2 = ng.stage2(cfg, s1["generator_path"])
        assert s2["final_accuracy"] >= 0.9
        acc = ng.evaluate(cfg, s2["weights_path"])
        assert abs(acc - s2["final_accuracy"]) < 1e-9

        arch = ng.arch_from_config(cfg)
        weights = ng.read_weights(s2["weights_path"], arch)
        assert weights.shape == (arch.param_count,)

        # round-trip via numpy is bit-exact
        path2 = os.path.join(out, "copy.ngpw")
        ng.write_weights(path2, arch, weights)
        again = ng.read_weights(path2, arch)
        assert (weights == again).all()

        # deterministic regeneration from the checkpoint
        w1 = ng.generate_weights(s1["generator_path"])
        w2 = ng.generate_weights(s1["generator_path"])
        assert (w1 == w2).all()
        assert w1.shape == (arch.param_count,)

        report = ng.report(out, os.path.join(out, "report.csv"))
        assert report.startswith("run_id,command,config_hash,metric,value")
    finally:
        shutil.rmtree(out, ignore_errors=True)


def test_errors_surface_as_python_exceptions():
    try:
        ng.ExperimentConfig.from_json("{\"bogus\": 1}")
    except ng.ConfigError as e:
        assert "bogus" in str(e)
    else:
        raise AssertionError("expected ConfigError")

    try:
        ng.tokenize("")
    except ng.ConfigError:
        pass
    else:
        raise AssertionError("expected ConfigError")


def main():
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for test in tests:
        test()
        print(f"ok {test.__name__}")
    print(f"{len(tests)} smoke tests passed")


if __name__ == "__main__":
    main()
