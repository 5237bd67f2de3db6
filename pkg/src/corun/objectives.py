"""Training objectives.

L1 norms are mean-reduced.  Where a trust-weight map ``w`` is given it
multiplies the per-pixel absolute error inside the mean, so every weighted
term is linear in ``w``.  The perceptual features are gradient-magnitude
maps of a Gaussian luminance pyramid.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .image import luminance
from .iqa import image_density

__all__ = [
    "ObjectiveConfig",
    "feature_pyramid",
    "downsample",
    "rec_common",
    "rec_contrastive",
    "coherence_loss",
    "loss_pretrain",
    "loss_finetune",
    "CONTRA_EPS",
]

CONTRA_EPS = 1e-7


@dataclass(frozen=True)
class ObjectiveConfig:
    beta_c: float = 0.2
    rho_r: float = 5.0
    rho_c: float = 0.01
    tau: tuple = (0.25, 0.5, 1.0)
    pyramid_levels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "tau", tuple(float(v) for v in self.tau))
        if min(self.beta_c, self.rho_r, self.rho_c, *self.tau) < 0:
            raise ValueError("objective weights must be non-negative")
        if len(self.tau) != self.pyramid_levels:
            raise ValueError("tau needs one weight per pyramid level")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def downsample(x):
    """Gaussian blur then keep every second row and column."""
    sig = (1.0, 1.0, 0) if x.ndim == 3 else 1.0
    return gaussian_filter(x, sig, mode="reflect")[::2, ::2]


def _grad_mag(y):
    gx = np.diff(y, axis=1, append=y[:, -1:])
    gy = np.diff(y, axis=0, append=y[-1:, :])
    return np.sqrt(gx * gx + gy * gy)


def feature_pyramid(img, levels=3):
    """Gradient magnitude of the luminance at ``levels`` scales (finest first)."""
    y = luminance(img)
    if min(y.shape) < 2**levels:
        raise ValueError(f"image must be at least {2 ** levels} pixels per side for {levels} levels")
    feats = []
    for i in range(levels):
        if i:
            y = downsample(y)
        feats.append(_grad_mag(y))
    return feats


def _weight_pyramid(w, levels):
    out = [w]
    for _ in range(levels - 1):
        out.append(downsample(out[-1]))
    return out


def _l1(a, b, w=None):
    diff = np.abs(np.asarray(a) - np.asarray(b))
    if w is None:
        return float(np.mean(diff))
    w = np.asarray(w)
    if diff.ndim == 3:
        w = w[:, :, None]
    return float(np.mean(w * diff))


def _check(*arrays):
    shape = np.shape(arrays[0])[:2]
    for a in arrays[1:]:
        if np.shape(a)[:2] != shape:
            raise ValueError("shape mismatch between loss inputs")


def rec_common(out, gt, cfg=ObjectiveConfig(), w=None):
    """L1 reconstruction plus weighted pyramid-feature distance."""
    _check(out, gt)
    loss = _l1(gt, out, w)
    if cfg.beta_c:
        fo = feature_pyramid(out, cfg.pyramid_levels)
        fg = feature_pyramid(gt, cfg.pyramid_levels)
        ws = _weight_pyramid(w, cfg.pyramid_levels) if w is not None else [None] * cfg.pyramid_levels
        loss += cfg.beta_c * sum(t * _l1(a, b, wi) for t, a, b, wi in zip(cfg.tau, fg, fo, ws))
    return loss


def rec_contrastive(lq, out, gt, cfg=ObjectiveConfig(), w=None):
    """L1 reconstruction plus feature distance to ``gt`` over distance to ``lq``.

    The weight map, if any, applies to the numerators only.
    """
    _check(lq, out, gt)
    loss = _l1(gt, out, w)
    if cfg.beta_c:
        fl = feature_pyramid(lq, cfg.pyramid_levels)
        fo = feature_pyramid(out, cfg.pyramid_levels)
        fg = feature_pyramid(gt, cfg.pyramid_levels)
        ws = _weight_pyramid(w, cfg.pyramid_levels) if w is not None else [None] * cfg.pyramid_levels
        for t, l, o, g, wi in zip(cfg.tau, fl, fo, fg, ws):
            loss += cfg.beta_c * t * _l1(g, o, wi) / (_l1(l, o) + CONTRA_EPS)
    return loss


def coherence_loss(p_lq, p_hq, t_hq, w=None):
    """Mean L1 residual of recomposing ``p_lq`` from ``p_hq`` and ``t_hq``."""
    _check(p_lq, p_hq, t_hq)
    tt = np.asarray(t_hq, dtype=np.float64)[:, :, None]
    recomposed = np.asarray(p_hq) * tt + (1.0 - tt)
    return _l1(recomposed, p_lq, w)


def loss_pretrain(lq, hq, t_hq, gt, cfg=ObjectiveConfig(), return_terms=False):
    """Synthetic-pair objective: contrastive reconstruction, coherence and density.

    ``lq`` is the (weakly augmented) network input, ``hq``/``t_hq`` its
    dehazed output and transmission, ``gt`` the aligned clear image.
    """
    if gt is None:
        raise ValueError("pre-training needs a ground-truth image")
    rec = cfg.rho_r * rec_contrastive(lq, hq, gt, cfg)
    coh = cfg.rho_c * coherence_loss(lq, hq, t_hq)
    dens = image_density(hq)
    total = rec + coh + dens
    if return_terms:
        return {"L_rec": rec, "L_coh": coh, "L_dens": dens, "total": total}
    return total


def loss_finetune(real, synthetic, w, cfg=ObjectiveConfig(), return_terms=False):
    """Mixed real/synthetic objective.

    Parameters
    ----------
    real : mapping
        ``aug_input``, ``hq``, ``t_hq`` (student output on the strongly
        augmented real image) and ``pseudo`` (pool label).
    synthetic : mapping or None
        ``hq`` and ``gt`` for a synthetic pair.
    w : ndarray (H, W)
        Trust weight of the pseudo label.
    """
    w = np.asarray(w, dtype=np.float64)
    _check(real["hq"], w)
    rec = cfg.rho_r * rec_contrastive(real["aug_input"], real["hq"], real["pseudo"], cfg, w=w)
    coh = cfg.rho_c * coherence_loss(real["aug_input"], real["hq"], real["t_hq"], w=w)
    dens = float(np.mean(w)) * image_density(real["hq"])
    if synthetic is not None:
        rec += cfg.rho_r * rec_common(synthetic["hq"], synthetic["gt"], cfg)
        dens += image_density(synthetic["hq"])
    total = rec + coh + dens
    if return_terms:
        return {"L_rec": rec, "L_coh": coh, "L_dens": dens, "total": total}
    return total
