"""Procedural clear scenes, depth maps and stand-in "real" hazy images.

Real dehazing corpora are large; these generators give small deterministic
images with texture, colour edges and plausible depth so every workflow can
be exercised at desk scale.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.ndimage import gaussian_filter

from .asm import AirlightSpec, compose, item_seed, normalize_depth
from .image import save_pfm, save_png

__all__ = ["make_scene", "make_depth", "make_real_hazy", "write_scene_dir"]


def make_scene(rng, h=128, w=128):
    """A colourful piecewise-smooth scene with values in ``[0.03, 0.92]``."""
    img = np.empty((h, w, 3))
    base = rng.uniform(0.15, 0.75, size=3)
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    for c in range(3):
        gx, gy = rng.uniform(-0.3, 0.3, size=2)
        img[:, :, c] = base[c] + gx * xx + gy * yy
    for _ in range(int(rng.integers(5, 10))):
        cy, cx = rng.uniform(0, 1, size=2)
        ry, rx = rng.uniform(0.06, 0.3, size=2)
        color = rng.uniform(0.0, 1.0, size=3)
        if rng.random() < 0.5:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        img[mask] = color
    texture = gaussian_filter(rng.normal(0, 1, size=(h, w)), 1.0)
    img += 0.06 * texture[:, :, None] / (texture.std() + 1e-12)
    return np.clip(img, 0.03, 0.92)


def make_depth(rng, h=128, w=128):
    """Smooth depth increasing towards the top of the frame, in arbitrary units."""
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    horizon = rng.uniform(0.2, 0.5)
    depth = 1.0 + 6.0 * np.clip(1.0 - yy / (1.0 - horizon + 1e-9), 0.0, None) ** 1.5
    depth += 0.8 * gaussian_filter(rng.normal(0, 1, size=(h, w)), 8.0) * 10.0
    depth += 0.5 * np.sin(2 * np.pi * xx * rng.uniform(0.5, 2.0))
    return np.clip(depth, 0.1, None) * rng.uniform(1.0, 20.0)


def make_real_hazy(rng, h=128, w=128):
    """A stand-in real hazy image: non-uniform haze, tinted airlight, sensor noise."""
    scene = make_scene(rng, h, w)
    depth = normalize_depth(make_depth(rng, h, w))
    density = gaussian_filter(rng.uniform(0.6, 1.4, size=(h, w)), 12.0)
    beta = rng.uniform(0.6, 1.8)
    t = np.clip(np.exp(-beta * depth * density), 0.05, 1.0)
    level = rng.uniform(0.8, 0.95)
    a = AirlightSpec(tuple(np.clip(level + rng.uniform(-0.04, 0.04, size=3), 0.6, 1.0)))
    hazy = compose(scene, t, a) + rng.normal(0, 0.01, size=(h, w, 3))
    return np.clip(hazy, 0.0, 1.0)


def write_scene_dir(directory, count, seed=0, size=128, real=False):
    """Write ``count`` scenes (``<id>.png`` + ``<id>.depth.pfm``) or real hazy PNGs."""
    os.makedirs(directory, exist_ok=True)
    names = []
    for i in range(count):
        rng = np.random.default_rng(item_seed(seed, "real" if real else "scene", i))
        name = f"{'real' if real else 'scene'}{i:03d}"
        if real:
            save_png(make_real_hazy(rng, size, size), os.path.join(directory, name + ".png"))
        else:
            save_png(make_scene(rng, size, size), os.path.join(directory, name + ".png"))
            save_pfm(make_depth(rng, size, size), os.path.join(directory, name + ".depth.pfm"))
        names.append(name)
    return names
