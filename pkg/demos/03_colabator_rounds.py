"""
Pseudo-labelling real images with a teacher/student pair
========================================================

A teacher dehazes real images; the best label seen so far is kept per
image together with a trust map.  The student is tuned on those labels
and the teacher follows it by exponential moving average.
"""

import numpy as np

from corun.asm import HazeSynthesisConfig, item_seed, synthesize_pair
from corun.augment import AugmentorConfig
from corun.colabator import LabelPool
from corun.scenes import make_depth, make_real_hazy, make_scene
from corun.solver import SolverParams
from corun.tuner import Sample, TunerConfig, finetune

real = [Sample(f"real{i}", make_real_hazy(np.random.default_rng(item_seed(8, i)), 64, 64)) for i in range(4)]
synthetic = []
for i in range(4):
    rng = np.random.default_rng(item_seed(7, i))
    scene, depth = make_scene(rng, 64, 64), make_depth(rng, 64, 64)
    hazy, t, _, _ = synthesize_pair(scene, depth, HazeSynthesisConfig(seed=1), i)
    synthetic.append(Sample(f"syn{i}", hazy, scene, t))

pool = LabelPool(n=8)
res = finetune(real, synthetic, SolverParams(), pool, cfg=TunerConfig(budget=30),
               aug=AugmentorConfig(crop_size=48), rounds=3, eta=0.9)

print(f"teacher density on real images: {res.density_before:.4f} -> {res.density_after:.4f}")
for image_id, hist in sorted(pool.history.items()):
    steps = ", ".join(f"r{r}: d={d:.3f} q={q:.3f}" for r, d, q in hist)
    print(f"{image_id}: {steps}")

# the trust map is highest where the label is both clear and sharp
w = pool["real0"].weight
print("trust weight range:", float(w.min()), float(w.max()))
