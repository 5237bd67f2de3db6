"""Strong photometric and weak geometric augmentation.

All randomness comes from an explicit ``numpy.random.Generator`` built from
a key, so an augmentation is a pure function of ``(config, key, image)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import gaussian_filter

from .asm import item_seed
from .image import as_grid, luminance

__all__ = [
    "StrongOp",
    "AugmentorConfig",
    "rng_for",
    "adjust_contrast",
    "adjust_brightness",
    "posterize",
    "adjust_sharpness",
    "jpeg_blocks",
    "gaussian_blur",
    "strong_augment",
    "weak_augment",
    "STRONG_OPS",
]

STRONG_OPS = ("contrast", "brightness", "posterize", "sharpness", "jpeg", "gaussian_blur")

# IJG baseline luminance quantisation table
_JPEG_LUMA_Q = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)

# safe magnitude ranges per operation
_SAFE = {
    "contrast": (0.3, 2.0),
    "brightness": (0.5, 1.5),
    "posterize": (2, 64),
    "sharpness": (0.0, 3.0),
    "jpeg": (5, 100),
    "gaussian_blur": (0.1, 3.0),
}

_DEFAULT_MAG = {
    "contrast": (0.6, 1.4),
    "brightness": (0.7, 1.3),
    "posterize": (4, 32),
    "sharpness": (0.0, 1.5),
    "jpeg": (30, 90),
    "gaussian_blur": (0.3, 1.5),
}


@dataclass(frozen=True)
class StrongOp:
    name: str
    prob: float = 0.3
    low: float = 0.0
    high: float = 0.0

    def __post_init__(self):
        if self.name not in STRONG_OPS:
            raise ValueError(f"unknown strong op {self.name!r}")
        if not 0.0 <= self.prob <= 1.0:
            raise ValueError("apply probability must lie in [0, 1]")
        lo, hi = _SAFE[self.name]
        if not lo <= self.low <= self.high <= hi:
            raise ValueError(f"{self.name} magnitude [{self.low}, {self.high}] outside [{lo}, {hi}]")


def _default_ops():
    return tuple(StrongOp(n, 0.3, *_DEFAULT_MAG[n]) for n in STRONG_OPS)


@dataclass(frozen=True)
class AugmentorConfig:
    """Strong op list (applied in order) plus weak crop/flip settings.

    ``crop_size`` of ``None`` keeps the full frame.
    """

    strong: tuple = field(default_factory=_default_ops)
    crop_size: int | None = None
    hflip_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strong", tuple(self.strong))
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ValueError("hflip_prob must lie in [0, 1]")
        if self.crop_size is not None and self.crop_size < 1:
            raise ValueError("crop_size must be positive")

    def without_strong(self):
        return AugmentorConfig(
            tuple(StrongOp(o.name, 0.0, o.low, o.high) for o in self.strong),
            self.crop_size,
            self.hflip_prob,
            self.seed,
        )

    def to_dict(self):
        d = asdict(self)
        d["strong"] = [asdict(o) for o in self.strong]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "strong" in d:
            d["strong"] = tuple(StrongOp(**o) for o in d["strong"])
        return cls(**d)


def rng_for(cfg, *key):
    """Generator for ``key`` (ints or strings) under the config seed."""
    return np.random.default_rng(item_seed(cfg.seed, *key))


def adjust_contrast(img, factor):
    """Scale deviations from the mean grey level."""
    mean = float(np.mean(luminance(img)))
    return np.clip(mean + factor * (img - mean), 0.0, 1.0)


def adjust_brightness(img, factor):
    return np.clip(img * factor, 0.0, 1.0)


def posterize(img, levels):
    """Quantise to ``levels`` evenly spaced values including 0 and 1."""
    levels = int(levels)
    return np.rint(img * (levels - 1)) / (levels - 1)


def adjust_sharpness(img, amount, sigma=1.0):
    """Unsharp masking: ``img + amount * (img - blur(img))``."""
    blurred = gaussian_blur(img, sigma)
    return np.clip(img + amount * (img - blurred), 0.0, 1.0)


def gaussian_blur(img, sigma):
    sig = (sigma, sigma, 0) if img.ndim == 3 else sigma
    return gaussian_filter(img, sig, mode="reflect")


def _quant_table(quality):
    quality = int(np.clip(quality, 1, 100))
    scale = 5000 / quality if quality < 50 else 200 - 2 * quality
    return np.clip(np.floor((_JPEG_LUMA_Q * scale + 50) / 100), 1, 255)


def jpeg_blocks(img, quality):
    """Compression artefacts from 8x8 block-DCT quantisation of the luma.

    Chroma is left untouched.  Works on any size by edge-padding to a
    multiple of 8.
    """
    img = np.asarray(img, dtype=np.float64)
    y = luminance(img)
    h, w = y.shape
    ph, pw = -h % 8, -w % 8
    yp = np.pad(y * 255.0 - 128.0, ((0, ph), (0, pw)), mode="edge")
    bh, bw = yp.shape[0] // 8, yp.shape[1] // 8
    blocks = yp.reshape(bh, 8, bw, 8).transpose(0, 2, 1, 3)
    coef = dctn(blocks, type=2, axes=(2, 3), norm="ortho")
    q = _quant_table(quality)
    coef = np.rint(coef / q) * q
    rec = idctn(coef, type=2, axes=(2, 3), norm="ortho")
    y_new = (rec.transpose(0, 2, 1, 3).reshape(yp.shape)[:h, :w] + 128.0) / 255.0
    delta = (y_new - y)[:, :, None] if img.ndim == 3 else y_new - y
    return np.clip(img + delta, 0.0, 1.0)


def _as_rng(cfg, key):
    if isinstance(key, np.random.Generator):
        return key
    key = key if isinstance(key, (tuple, list)) else (key,)
    return rng_for(cfg, *key)


def _apply(name, img, mag):
    if name == "contrast":
        return adjust_contrast(img, mag)
    if name == "brightness":
        return adjust_brightness(img, mag)
    if name == "posterize":
        return posterize(img, round(mag))
    if name == "sharpness":
        return adjust_sharpness(img, mag)
    if name == "jpeg":
        return jpeg_blocks(img, round(mag))
    return np.clip(gaussian_blur(img, mag), 0.0, 1.0)


def strong_augment(img, cfg, key):
    """Apply a random subset of the configured photometric ops.

    Every op draws its fire decision and magnitude whether or not it fires,
    so the random stream does not depend on earlier outcomes.  ``key`` is a
    ``Generator`` or a key tuple for :func:`rng_for`.
    """
    rng = _as_rng(cfg, key)
    out = as_grid(img)
    for op in cfg.strong:
        fire = rng.random() < op.prob
        mag = rng.uniform(op.low, op.high)
        if fire:
            out = _apply(op.name, out, mag)
    return out


def weak_augment(img, *paired, cfg, key):
    """Random crop and horizontal flip applied identically to all inputs.

    ``img`` and each of ``paired`` must share their first two dimensions.
    Returns a tuple ``(img, *paired)``.
    """
    rng = _as_rng(cfg, key)
    arrays = (np.asarray(img, dtype=np.float64),) + tuple(np.asarray(a, dtype=np.float64) for a in paired)
    h, w = arrays[0].shape[:2]
    for a in arrays[1:]:
        if a.shape[:2] != (h, w):
            raise ValueError("paired maps must share the image size")
    size = cfg.crop_size
    ch, cw = (h, w) if size is None else (size, size)
    if ch > h or cw > w:
        raise ValueError(f"crop size {size} exceeds image {h}x{w}")
    r0 = int(rng.integers(0, h - ch + 1))
    c0 = int(rng.integers(0, w - cw + 1))
    flip = rng.random() < cfg.hflip_prob
    out = []
    for a in arrays:
        a = a[r0 : r0 + ch, c0 : c0 + cw]
        if flip:
            a = a[:, ::-1]
        out.append(np.ascontiguousarray(a))
    return tuple(out)
