"""
How many stages?
================

Pre-train the solver once per stage count and compare the outcome.
"""

import numpy as np

from corun.asm import HazeSynthesisConfig, item_seed, synthesize_pair
from corun.augment import AugmentorConfig
from corun.scenes import make_depth, make_scene
from corun.tuner import Sample, TunerConfig, sweep_stages

corpus = []
for i in range(4):
    rng = np.random.default_rng(item_seed(7, i))
    scene, depth = make_scene(rng, 64, 64), make_depth(rng, 64, 64)
    hazy, t, _, _ = synthesize_pair(scene, depth, HazeSynthesisConfig(seed=1), i)
    corpus.append(Sample(f"syn{i}", hazy, scene, t))

rows = sweep_stages(corpus, [1, 2, 4, 6], cfg=TunerConfig(budget=40), aug=AugmentorConfig(crop_size=48))
print(f"{'K':>3} {'init':>8} {'final':>8} {'density':>8} {'coherence':>10}")
for r in rows:
    print(f"{r['stages']:>3} {r['init_loss']:8.3f} {r['final_loss']:8.3f} "
          f"{r['mean_density']:8.4f} {r['mean_coherence']:10.2e}")
