"""No-reference patch scoring and trust-weight maps.

Two classical evaluators stand in for learned ones:

* density: ``1 - mean(dark channel)``, higher means less haze;
* quality: blend of RMS contrast and mean gradient magnitude of the luma.

Scores are computed per patch on an ``n x n`` grid and min-max normalised
within the image.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .image import as_grid, luminance, partition
from .solver import dark_channel

__all__ = [
    "PatchScoreGrid",
    "density_score",
    "quality_score",
    "normalize_scores",
    "score_image",
    "upsample_grid",
    "trust_weight",
    "image_density",
    "DENSITY_WINDOW",
]

DENSITY_WINDOW = 7
CONTRAST_SCALE = 0.25
GRADIENT_SCALE = 0.15
MIN_QUALITY_PATCH = 8


@dataclass(frozen=True)
class PatchScoreGrid:
    """Normalised density (``d``) and quality (``q``) scores on an ``n x n`` grid."""

    n: int
    d: np.ndarray
    q: np.ndarray

    @property
    def mean_d(self):
        return float(np.mean(self.d))

    @property
    def mean_q(self):
        return float(np.mean(self.q))

    def to_dict(self):
        return {
            "n": self.n,
            "d": self.d.tolist(),
            "q": self.q.tolist(),
            "mean_d": self.mean_d,
            "mean_q": self.mean_q,
        }

    @classmethod
    def from_dict(cls, data):
        d = np.asarray(data["d"], dtype=np.float64)
        q = np.asarray(data["q"], dtype=np.float64)
        n = int(data["n"])
        if d.shape != (n, n) or q.shape != (n, n):
            raise ValueError("score grids do not match n")
        return cls(n, d, q)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def density_score(patch, window=DENSITY_WINDOW):
    """Raw haze-density score of a patch; 1 for black, 0 for white."""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.size == 0:
        raise ValueError("empty patch")
    return 1.0 - float(np.mean(dark_channel(patch, window)))


def _gradient_magnitude(y):
    gx = np.diff(y, axis=1)[:-1, :]
    gy = np.diff(y, axis=0)[:, :-1]
    return np.sqrt(gx * gx + gy * gy)


def quality_score(patch):
    """Raw quality score in ``[0, 1]``: contrast and sharpness of the luma."""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.shape[0] < MIN_QUALITY_PATCH or patch.shape[1] < MIN_QUALITY_PATCH:
        raise ValueError(f"quality patches must be at least {MIN_QUALITY_PATCH}x{MIN_QUALITY_PATCH}")
    y = luminance(patch)
    contrast = min(float(np.std(y)) / CONTRAST_SCALE, 1.0)
    sharpness = min(float(np.mean(_gradient_magnitude(y))) / GRADIENT_SCALE, 1.0)
    return 0.5 * contrast + 0.5 * sharpness


def normalize_scores(raw):
    """Min-max normalise to ``[0, 1]``; a constant vector maps to 0.5."""
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = raw.min(), raw.max()
    if hi - lo <= 1e-12:
        return np.full(raw.shape, 0.5)
    return (raw - lo) / (hi - lo)


def score_image(img, n=8):
    """Score every patch of ``img`` and normalise within the image."""
    img = as_grid(img)
    layout = partition(img, n)
    raw_d = np.empty((n, n))
    raw_q = np.empty((n, n))
    for i, j, patch in layout.patches(img):
        raw_d[i, j] = density_score(patch)
        raw_q[i, j] = quality_score(patch)
    return PatchScoreGrid(n, normalize_scores(raw_d), normalize_scores(raw_q))


def upsample_grid(grid, h, w):
    """Bilinear resize of an ``n x n`` grid to ``(h, w)``.

    Grid nodes sit at the patch centres of :func:`partition`; pixels beyond
    the outermost centres take the edge values.
    """
    grid = np.asarray(grid, dtype=np.float64)
    n = grid.shape[0]
    rc, cc = partition((h, w), n).centers()
    rows = np.arange(h)
    cols = np.arange(w)
    # interpolate along columns for every grid row, then along rows
    tmp = np.stack([np.interp(cols, cc, grid[i]) for i in range(n)])
    return np.stack([np.interp(rows, rc, tmp[:, c]) for c in range(w)], axis=1)


def trust_weight(scores, h, w, combine="product"):
    """Full-resolution trust weight from patch scores.

    ``combine="product"`` uses ``d * q``; ``"sum"`` uses ``(d + q) / 2`` so the
    result stays in ``[0, 1]``.
    """
    if combine == "product":
        g = scores.d * scores.q
    elif combine == "sum":
        g = 0.5 * (scores.d + scores.q)
    else:
        raise ValueError(f"unknown combine mode {combine!r}")
    return np.clip(upsample_grid(g, h, w), 0.0, 1.0)


def image_density(img, window=DENSITY_WINDOW):
    """Whole-image density loss: mean dark channel (lower means less haze)."""
    return float(np.mean(dark_channel(as_grid(img), window)))
