"""Raster helpers: validation, PNG / PFM file I/O and patch partitioning.

Images are plain ``numpy`` arrays of ``float64``.  A colour image (a
"pixel grid") has shape ``(H, W, C)`` with ``C`` in ``{1, 3}`` and values in
``[0, 1]``; a transmission map has shape ``(H, W)`` and values in
``[t_floor, 1]``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import png

__all__ = [
    "ImageFormatError",
    "T_FLOOR",
    "as_grid",
    "as_tmap",
    "luminance",
    "load_png",
    "save_png",
    "load_pfm",
    "save_pfm",
    "PatchLayout",
    "partition",
]

#: Default lower bound on transmission values.
T_FLOOR = 0.05

_LUMA = np.array([0.299, 0.587, 0.114])


class ImageFormatError(ValueError):
    """Raised for unreadable or unsupported image files."""


def as_grid(data, copy=False):
    """Validate ``data`` as a pixel grid and return it as ``(H, W, C)`` float64.

    A 2-D array is promoted to a single channel grid.
    """
    arr = np.array(data, dtype=np.float64, copy=copy) if copy else np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"expected an (H, W, 1|3) image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("image must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image intensities must lie in [0, 1]")
    return arr


def as_tmap(data, t_floor=T_FLOOR, shape=None):
    """Validate ``data`` as a transmission map of shape ``(H, W)``."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim != 2:
        raise ValueError(f"expected an (H, W) transmission map, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape[:2]):
        raise ValueError(f"transmission shape {arr.shape} does not match image {tuple(shape[:2])}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("transmission map contains non-finite values")
    # tolerate round-off from float32 storage of the floor value
    if arr.min() < t_floor - 1e-7 or arr.max() > 1.0:
        raise ValueError(f"transmission values must lie in [{t_floor}, 1]")
    return arr


def luminance(img):
    """Rec. 601 luma of an ``(H, W, C)`` image, returned as ``(H, W)``."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img @ _LUMA


def _srgb_to_linear(x):
    return np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def load_png(path, linearize=False):
    """Read an 8- or 16-bit grayscale/RGB PNG into a ``(H, W, C)`` grid.

    Values are divided by the bit-depth maximum.  Alpha channels are dropped;
    palette images are expanded.  Stored values are treated as intensities
    unless ``linearize`` is set, in which case the sRGB curve is inverted.
    """
    try:
        reader = png.Reader(filename=os.fspath(path))
        width, height, rows, info = reader.asDirect()
        raw = np.vstack([np.asarray(r, dtype=np.uint32) for r in rows])
    except png.Error as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc
    planes = info["planes"]
    bitdepth = info["bitdepth"]
    if bitdepth not in (8, 16):
        # low bit depths come back unscaled; rescale to 8-bit
        raw = raw * (255 // ((1 << bitdepth) - 1))
        bitdepth = 8
    arr = raw.reshape(height, width, planes)
    if info.get("alpha"):
        arr = arr[:, :, :-1]
    if arr.shape[2] not in (1, 3):
        raise ImageFormatError(f"{path}: unsupported channel count {arr.shape[2]}")
    out = arr.astype(np.float64) / float((1 << bitdepth) - 1)
    if linearize:
        out = _srgb_to_linear(out)
    return out


def save_png(grid, path):
    """Write ``grid`` as an 8-bit PNG, rounding half to even."""
    arr = as_grid(grid)
    h, w, c = arr.shape
    q = np.rint(arr * 255.0).astype(np.uint8)
    writer = png.Writer(width=w, height=h, greyscale=(c == 1), bitdepth=8, compression=9)
    with open(path, "wb") as fh:
        writer.write(fh, q.reshape(h, w * c))


def load_pfm(path):
    """Read a Portable Float Map.

    Returns ``(H, W)`` for ``Pf`` files and ``(H, W, 3)`` for ``PF`` files, as
    float64.  Rows are stored bottom-to-top, as the format requires.
    """
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic not in (b"Pf", b"PF"):
            raise ImageFormatError(f"{path}: bad PFM magic")
        try:
            width, height = (int(v) for v in fh.readline().split())
            scale = float(fh.readline())
        except ValueError as exc:
            raise ImageFormatError(f"{path}: bad PFM header") from exc
        payload = fh.read()
    channels = 1 if magic == b"Pf" else 3
    dtype = "<f4" if scale < 0 else ">f4"
    count = width * height * channels
    if len(payload) != 4 * count:
        raise ImageFormatError(f"{path}: expected {4 * count} data bytes, found {len(payload)}")
    arr = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    arr = arr.reshape(height, width, channels)[::-1]
    if channels == 1:
        arr = arr[:, :, 0]
    return np.ascontiguousarray(arr)


def save_pfm(data, path):
    """Write a float map as little-endian PFM (scale ``-1.0``).

    Values are stored as float32; ``load_pfm(save_pfm(x))`` reproduces
    ``x.astype(float32)`` bit for bit.
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim == 2:
        magic = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"PF"
    else:
        raise ValueError(f"PFM stores 1 or 3 channels, got shape {arr.shape}")
    h, w = arr.shape[:2]
    header = magic + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n"
    body = np.ascontiguousarray(arr[::-1], dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header + body)


@dataclass(frozen=True)
class PatchLayout:
    """An ``n x n`` tiling of an ``height x width`` image.

    ``rects[i][j]`` is ``(r0, r1, c0, c1)`` with half-open bounds.  Interior
    patches are ``floor(H/n) x floor(W/n)``; the last row and column absorb the
    remainder.
    """

    n: int
    height: int
    width: int

    @property
    def row_edges(self):
        ph = self.height // self.n
        return [i * ph for i in range(self.n)] + [self.height]

    @property
    def col_edges(self):
        pw = self.width // self.n
        return [i * pw for i in range(self.n)] + [self.width]

    @property
    def rects(self):
        re, ce = self.row_edges, self.col_edges
        return [[(re[i], re[i + 1], ce[j], ce[j + 1]) for j in range(self.n)] for i in range(self.n)]

    def centers(self):
        """Pixel-coordinate centres of patch rows and patch columns."""
        re, ce = np.array(self.row_edges), np.array(self.col_edges)
        return (re[:-1] + re[1:] - 1) / 2.0, (ce[:-1] + ce[1:] - 1) / 2.0

    def patches(self, img):
        """Yield ``(i, j, patch)`` for every tile of ``img``."""
        for i, row in enumerate(self.rects):
            for j, (r0, r1, c0, c1) in enumerate(row):
                yield i, j, img[r0:r1, c0:c1]


def partition(img_or_shape, n):
    """Split an image (or an ``(H, W, ...)`` shape) into an ``n x n`` layout."""
    shape = img_or_shape if isinstance(img_or_shape, tuple) else np.shape(img_or_shape)
    h, w = int(shape[0]), int(shape[1])
    if not isinstance(n, (int, np.integer)) or n < 1 or n > min(h, w):
        raise ValueError(f"patch count n={n} out of range for a {h}x{w} image")
    return PatchLayout(int(n), h, w)
