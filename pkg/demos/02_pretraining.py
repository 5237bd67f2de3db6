"""
Tuning stage parameters on synthetic pairs
==========================================

The per-stage step sizes are tuned by a derivative-free search that
minimises the pre-training loss on a small synthetic corpus.
"""

import numpy as np

from corun.asm import HazeSynthesisConfig, item_seed, synthesize_pair
from corun.augment import AugmentorConfig
from corun.scenes import make_depth, make_scene
from corun.solver import SolverParams
from corun.tuner import Sample, TunerConfig, pretrain

corpus = []
for i in range(6):
    rng = np.random.default_rng(item_seed(7, i))
    scene, depth = make_scene(rng, 64, 64), make_depth(rng, 64, 64)
    hazy, t, _, _ = synthesize_pair(scene, depth, HazeSynthesisConfig(seed=1), i)
    corpus.append(Sample(f"syn{i}", hazy, scene, t))

report = pretrain(corpus, SolverParams(), cfg=TunerConfig(budget=80), aug=AugmentorConfig(crop_size=48))
print(f"loss {report.init_loss:.3f} -> {report.best_loss:.3f} "
      f"({report.accepted_moves} accepted moves, {len(report.loss_trace)} evaluations)")

# the tuned steps, stage by stage
for k, stage in enumerate(report.best_params.stages):
    print(f"stage {k}: lambda = {stage.lam:.4f}, mu = {stage.mu:.4f}")

# the individual loss terms of the last evaluation
print({k: round(v, 4) for k, v in report.terms[-1].items()})
