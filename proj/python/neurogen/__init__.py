# SPDX-License-Identifier: Apache-2.0
"""Conditioned generation of target-network parameters.

The heavy lifting lives in the `_neurogen` extension; this package re-exports
its surface.  Typical flow::

    import neurogen as ng

    cfg = ng.ExperimentConfig.from_file("experiment.json")
    corpus = ng.build_corpus(cfg)
    gen = ng.stage1(cfg, corpus["corpus_path"])
    run = ng.stage2(cfg, gen["generator_path"])
    print(run["final_accuracy"])
"""

try:
    from ._neurogen import *  # noqa: F401,F403  (installed layout)
    from ._neurogen import __version__  # noqa: F401
except ImportError:  # build-tree layout: extension next to the package
    from _neurogen import *  # noqa: F401,F403
    from _neurogen import __version__  # noqa: F401
