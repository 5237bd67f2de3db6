"""Atmospheric scattering model: haze composition, inversion and synthesis."""

from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass

import numpy as np

from .image import T_FLOOR, as_grid, as_tmap

__all__ = [
    "AirlightSpec",
    "HazeSynthesisConfig",
    "compose",
    "compose_simplified",
    "invert_exact",
    "transmission_from_depth",
    "normalize_depth",
    "synthesize_pair",
    "item_seed",
]


@dataclass(frozen=True)
class AirlightSpec:
    """Per-channel global atmospheric light."""

    a: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        a = tuple(float(v) for v in np.atleast_1d(self.a))
        object.__setattr__(self, "a", a)
        if any(not 0.6 <= v <= 1.0 for v in a):
            raise ValueError(f"airlight channels must lie in [0.6, 1.0], got {a}")
        if max(a) - min(a) > 0.1 + 1e-12:
            raise ValueError(f"airlight channel spread exceeds 0.1: {a}")

    def as_array(self, channels):
        a = np.asarray(self.a, dtype=np.float64)
        if a.size == 1:
            return np.full(channels, a[0])
        if a.size != channels:
            raise ValueError(f"airlight has {a.size} channels, image has {channels}")
        return a


@dataclass(frozen=True)
class HazeSynthesisConfig:
    """Random ranges for synthetic haze.

    ``chroma_jitter`` is the largest per-channel offset from the drawn grey
    airlight level.  The default airlight is exactly 1 so that synthetic
    triples satisfy the simplified model used by the solver.
    """

    beta_range: tuple = (0.3, 1.5)
    airlight_range: tuple = (1.0, 1.0)
    chroma_jitter: float = 0.0
    seed: int = 0
    t_floor: float = T_FLOOR

    def __post_init__(self):
        b0, b1 = self.beta_range
        a0, a1 = self.airlight_range
        if not 0 < b0 <= b1:
            raise ValueError(f"invalid beta_range {self.beta_range}")
        if not 0.6 <= a0 <= a1 <= 1.0:
            raise ValueError(f"invalid airlight_range {self.airlight_range}")
        if not 0 <= self.chroma_jitter <= 0.05:
            raise ValueError("chroma_jitter must lie in [0, 0.05]")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("beta_range", "airlight_range"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def _check_shapes(img, t):
    if img.shape[:2] != t.shape:
        raise ValueError(f"shape mismatch: image {img.shape[:2]} vs transmission {t.shape}")


def compose(scene, t, airlight=AirlightSpec()):
    """Hazy observation ``J*t + A*(1 - t)``, clamped to ``[0, 1]``."""
    scene = as_grid(scene)
    t = np.asarray(t, dtype=np.float64)
    _check_shapes(scene, t)
    a = airlight.as_array(scene.shape[2])
    tt = t[:, :, None]
    return np.clip(scene * tt + a * (1.0 - tt), 0.0, 1.0)


def compose_simplified(scene, t):
    """Hazy observation with unit airlight: ``J*T + 1 - T``."""
    scene = as_grid(scene)
    t = np.asarray(t, dtype=np.float64)
    _check_shapes(scene, t)
    tt = t[:, :, None]
    return np.clip(scene * tt + 1.0 - tt, 0.0, 1.0)


def invert_exact(p, t, t_floor=T_FLOOR):
    """Recover the scene from a hazy image and known transmission (unit airlight)."""
    p = as_grid(p)
    t = np.asarray(t, dtype=np.float64)
    _check_shapes(p, t)
    if t.min() < t_floor:
        raise ValueError(f"transmission below floor {t_floor}")
    tt = t[:, :, None]
    return np.clip((p - 1.0 + tt) / tt, 0.0, 1.0)


def transmission_from_depth(depth, beta, t_floor=T_FLOOR):
    """Beer-Lambert transmission ``max(exp(-beta*d), t_floor)``."""
    d = np.asarray(depth, dtype=np.float64)
    if d.ndim == 3 and d.shape[2] == 1:
        d = d[:, :, 0]
    if d.ndim != 2:
        raise ValueError(f"depth must be single-channel, got shape {d.shape}")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValueError("depth must be finite and non-negative")
    if beta <= 0:
        raise ValueError("beta must be positive")
    return np.maximum(np.exp(-beta * d), t_floor)


def normalize_depth(depth):
    """Rescale a non-negative depth map of arbitrary units to ``[0, 1]``."""
    d = np.asarray(depth, dtype=np.float64)
    if d.ndim == 3 and d.shape[2] == 1:
        d = d[:, :, 0]
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValueError("depth must be finite and non-negative")
    peak = d.max()
    return d / peak if peak > 0 else np.zeros_like(d)


def item_seed(*parts):
    """Stable integer entropy for a mix of ints and strings (for RNG seeding)."""
    out = []
    for p in parts:
        if isinstance(p, str):
            out.append(zlib.crc32(p.encode("utf-8")))
        else:
            out.append(int(p))
    return out


def synthesize_pair(scene, depth, cfg=HazeSynthesisConfig(), index=0):
    """Generate a hazy image from a clear scene and its depth map.

    ``beta`` and the airlight are drawn from a generator seeded by
    ``(cfg.seed, index)``, so items can be produced in any order.

    Returns
    -------
    hazy : ndarray (H, W, C)
    t : ndarray (H, W)
    airlight : AirlightSpec
    beta : float
    """
    scene = as_grid(scene)
    rng = np.random.default_rng(item_seed(cfg.seed, index))
    beta = float(rng.uniform(*cfg.beta_range))
    level = float(rng.uniform(*cfg.airlight_range))
    jitter = rng.uniform(-cfg.chroma_jitter, cfg.chroma_jitter, size=scene.shape[2])
    a = np.clip(level + jitter, 0.6, 1.0)
    airlight = AirlightSpec(tuple(a))
    t = transmission_from_depth(normalize_depth(depth), beta, cfg.t_floor)
    as_tmap(t, cfg.t_floor, scene.shape)
    hazy = compose(scene, t, airlight)
    return hazy, t, airlight, beta
