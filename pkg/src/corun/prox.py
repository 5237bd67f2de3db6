"""Edge-preserving proximal operators for the transmission and scene slots.

Each operator is described by a :class:`ProxSpec`.  ``apply_t_prox`` refines
a transmission estimate using the current scene as guidance,
``apply_s_prox`` cleans up a scene estimate.  Both blend the filtered result
with their input by ``strength`` and never widen the input's value range.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .image import T_FLOOR, luminance

__all__ = ["ProxSpec", "guided_filter", "joint_bilateral", "apply_t_prox", "apply_s_prox", "PROX_KINDS"]

PROX_KINDS = ("identity", "guided", "bilateral")

#: Box bounds for the continuous fields; used by validation and the tuner.
PROX_BOUNDS = {
    "eps": (1e-6, 1.0),
    "sigma_s": (0.25, 32.0),
    "sigma_r": (1e-3, 1.0),
    "strength": (0.0, 1.0),
}

#: Continuous fields, in flattening order.
PROX_SCALARS = ("eps", "sigma_s", "sigma_r", "strength")


@dataclass(frozen=True)
class ProxSpec:
    kind: str = "identity"
    radius: int = 4
    eps: float = 1e-3
    sigma_s: float = 2.0
    sigma_r: float = 0.1
    strength: float = 1.0

    def __post_init__(self):
        if self.kind not in PROX_KINDS:
            raise ValueError(f"unknown prox kind {self.kind!r}")
        if self.kind == "identity":
            return
        if not 1 <= int(self.radius) <= 32 or int(self.radius) != self.radius:
            raise ValueError(f"radius must be an integer in [1, 32], got {self.radius}")
        for name, (lo, hi) in PROX_BOUNDS.items():
            v = getattr(self, name)
            if not (np.isfinite(v) and lo <= v <= hi):
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _box(x, radius):
    return uniform_filter(x, size=2 * radius + 1, mode="reflect")


def guided_filter(guide, src, radius, eps):
    """Grey-guide guided filter of a single-channel ``src``.

    The result is clipped to the range of ``src``; the local linear model can
    otherwise overshoot near strong guide edges.
    """
    mean_i = _box(guide, radius)
    mean_p = _box(src, radius)
    cov_ip = _box(guide * src, radius) - mean_i * mean_p
    var_i = _box(guide * guide, radius) - mean_i * mean_i
    a = cov_ip / (var_i + eps)
    b = mean_p - a * mean_i
    out = _box(a, radius) * guide + _box(b, radius)
    return np.clip(out, src.min(), src.max())


def joint_bilateral(src, guide, radius, sigma_s, sigma_r):
    """Joint bilateral filter.

    ``src`` is ``(H, W)`` or ``(H, W, C)``; ``guide`` is ``(H, W)`` or
    ``(H, W, K)``.  Range weights use the Euclidean distance between guide
    vectors, so all channels of ``src`` share one weight per offset and the
    output is a convex combination of input values.
    """
    src = np.asarray(src, dtype=np.float64)
    guide = np.asarray(guide, dtype=np.float64)
    squeeze = src.ndim == 2
    if squeeze:
        src = src[:, :, None]
    if guide.ndim == 2:
        guide = guide[:, :, None]
    h, w = src.shape[:2]
    r = int(radius)
    pad = ((r, r), (r, r), (0, 0))
    sp = np.pad(src, pad, mode="reflect") if min(h, w) > r else np.pad(src, pad, mode="symmetric")
    gp = np.pad(guide, pad, mode="reflect") if min(h, w) > r else np.pad(guide, pad, mode="symmetric")
    num = np.zeros_like(src)
    den = np.zeros((h, w, 1))
    inv_s = -0.5 / sigma_s**2
    inv_r = -0.5 / sigma_r**2
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            gs = gp[r + dy : r + dy + h, r + dx : r + dx + w]
            diff = np.sum((gs - guide) ** 2, axis=2, keepdims=True)
            wgt = np.exp(inv_s * (dy * dy + dx * dx) + inv_r * diff)
            num += wgt * sp[r + dy : r + dy + h, r + dx : r + dx + w]
            den += wgt
    out = num / den
    return out[:, :, 0] if squeeze else out


def _filter_map(spec, src, guide):
    """Filter a single-channel map with the given guide (grey ``(H, W)``)."""
    if spec.kind == "guided":
        return guided_filter(guide, src, spec.radius, spec.eps)
    return joint_bilateral(src, guide, spec.radius, spec.sigma_s, spec.sigma_r)


def apply_t_prox(spec, j_guide, t_hat, t_floor=T_FLOOR):
    """Refine a transmission map using the scene estimate as guide."""
    t_hat = np.asarray(t_hat, dtype=np.float64)
    if np.shape(j_guide)[:2] != t_hat.shape:
        raise ValueError("guide and transmission shapes differ")
    if spec.kind == "identity" or spec.strength == 0.0:
        return t_hat
    filtered = _filter_map(spec, t_hat, luminance(j_guide))
    out = spec.strength * filtered + (1.0 - spec.strength) * t_hat
    return np.clip(out, t_floor, 1.0)


def apply_s_prox(spec, j_hat, t=None):
    """Edge-preserving clean-up of a scene estimate.

    ``t`` is accepted for interface symmetry with the transmission slot; the
    classical operators here do not use it.
    """
    j_hat = np.asarray(j_hat, dtype=np.float64)
    if t is not None and np.shape(t)[:2] != j_hat.shape[:2]:
        raise ValueError("scene and transmission shapes differ")
    if spec.kind == "identity" or spec.strength == 0.0:
        return j_hat
    if spec.kind == "bilateral":
        filtered = joint_bilateral(j_hat, j_hat, spec.radius, spec.sigma_s, spec.sigma_r)
    else:
        guide = luminance(j_hat)
        filtered = np.stack(
            [guided_filter(guide, j_hat[:, :, c], spec.radius, spec.eps) for c in range(j_hat.shape[2])],
            axis=2,
        )
    out = spec.strength * filtered + (1.0 - spec.strength) * j_hat
    return np.clip(out, 0.0, 1.0)
