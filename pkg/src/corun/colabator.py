"""Iterative mean-teacher pseudo-labelling with an optimal label pool.

The teacher dehazes the clean real image, the student dehazes a strongly
augmented copy.  Teacher outputs are scored patch-wise and kept in a pool
that only ever improves; the pool entry is what the student is trained
against.  After each round the teacher moves towards the student by EMA.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentorConfig, strong_augment
from .image import load_pfm, load_png, save_pfm, save_png
from .iqa import PatchScoreGrid, score_image, trust_weight
from .solver import SolverParams, dehaze

__all__ = [
    "PoolIntegrityError",
    "LabelPoolEntry",
    "LabelPool",
    "ForwardResult",
    "RoundItem",
    "ColabatorState",
    "teacher_student_forward",
    "pool_update",
    "ema_update",
    "colabator_round",
    "verify_pool",
]

POOL_FILES = ("pseudo.png", "trans.pfm", "weight.pfm", "scores.json")


class PoolIntegrityError(RuntimeError):
    """A stored pool entry is inconsistent or its files were altered."""


@dataclass(frozen=True)
class LabelPoolEntry:
    image_id: str
    pseudo_image: np.ndarray
    pseudo_t: np.ndarray
    weight: np.ndarray
    scores: PatchScoreGrid
    round: int

    def check(self):
        h, w = self.pseudo_image.shape[:2]
        if self.pseudo_t.shape != (h, w) or self.weight.shape != (h, w):
            raise PoolIntegrityError(f"{self.image_id}: component shapes disagree")
        for name, arr in (("d", self.scores.d), ("q", self.scores.q), ("weight", self.weight)):
            if not (np.all(np.isfinite(arr)) and arr.min() >= 0.0 and arr.max() <= 1.0):
                raise PoolIntegrityError(f"{self.image_id}: {name} outside [0, 1]")


def _better(scores, stored, mode):
    if mode == "mean":
        return scores.mean_d > stored.mean_d and scores.mean_q > stored.mean_q
    if mode == "dominance":
        return bool(np.all(scores.d > stored.d) and np.all(scores.q > stored.q))
    raise ValueError(f"unknown acceptance mode {mode!r}")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _safe_dirname(image_id):
    return re.sub(r"[^A-Za-z0-9._-]", "_", image_id)


class LabelPool:
    """Best-ever pseudo labels keyed by image id.

    With a ``directory`` the pool is persisted after every accepted update:
    per-image files under ``<dir>/<id>/`` and a ``manifest.json`` that is
    replaced atomically.

    Parameters
    ----------
    directory : path, optional
    n : int
        Patch grid side used for scoring.
    mode : {"mean", "dominance"}
        Acceptance rule: mean scores both improve, or every patch improves.
    combine : {"product", "sum"}
        How density and quality combine into the trust weight.
    """

    def __init__(self, directory=None, n=8, mode="mean", combine="product"):
        self.directory = os.fspath(directory) if directory is not None else None
        self.n = n
        self.mode = mode
        self.combine = combine
        self.entries = {}
        self.history = {}

    def __len__(self):
        return len(self.entries)

    def __contains__(self, image_id):
        return image_id in self.entries

    def __getitem__(self, image_id):
        return self.entries[image_id]

    def update(self, image_id, pseudo_image, pseudo_t, round_index=0):
        """Offer a candidate label; return ``(current_best_entry, accepted)``."""
        scores = score_image(pseudo_image, self.n)
        stored = self.entries.get(image_id)
        if stored is not None:
            stored.check()
        accepted = stored is None or _better(scores, stored.scores, self.mode)
        if accepted:
            h, w = pseudo_image.shape[:2]
            entry = LabelPoolEntry(
                image_id,
                np.asarray(pseudo_image, dtype=np.float64),
                np.asarray(pseudo_t, dtype=np.float64),
                trust_weight(scores, h, w, self.combine),
                scores,
                round_index,
            )
            entry.check()
            self.entries[image_id] = entry
            self.history.setdefault(image_id, []).append([round_index, scores.mean_d, scores.mean_q])
            if self.directory is not None:
                self._persist(entry)
        return self.entries[image_id], accepted

    # -- persistence ---------------------------------------------------
    def _persist(self, entry):
        sub = os.path.join(self.directory, _safe_dirname(entry.image_id))
        os.makedirs(sub, exist_ok=True)
        save_png(entry.pseudo_image, os.path.join(sub, "pseudo.png"))
        save_pfm(entry.pseudo_t, os.path.join(sub, "trans.pfm"))
        save_pfm(entry.weight, os.path.join(sub, "weight.pfm"))
        entry.scores.save(os.path.join(sub, "scores.json"))
        self.write_manifest()

    def manifest(self):
        items = {}
        for image_id in sorted(self.entries):
            e = self.entries[image_id]
            sub = os.path.join(self.directory, _safe_dirname(image_id))
            items[image_id] = {
                "dir": _safe_dirname(image_id),
                "round": e.round,
                "mean_d": e.scores.mean_d,
                "mean_q": e.scores.mean_q,
                "history": self.history.get(image_id, []),
                "files": {name: _sha256(os.path.join(sub, name)) for name in POOL_FILES},
            }
        return {"n": self.n, "mode": self.mode, "combine": self.combine, "entries": items}

    def write_manifest(self):
        os.makedirs(self.directory, exist_ok=True)
        text = json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n"
        fd, tmp = tempfile.mkstemp(dir=self.directory, prefix=".manifest.", suffix=".tmp")
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, os.path.join(self.directory, "manifest.json"))

    @classmethod
    def open(cls, directory):
        """Load a persisted pool (a missing manifest gives an empty pool)."""
        path = os.path.join(directory, "manifest.json")
        if not os.path.exists(path):
            return cls(directory)
        with open(path) as fh:
            man = json.load(fh)
        pool = cls(directory, man["n"], man["mode"], man["combine"])
        for image_id, item in man["entries"].items():
            sub = os.path.join(directory, item["dir"])
            try:
                entry = LabelPoolEntry(
                    image_id,
                    load_png(os.path.join(sub, "pseudo.png")),
                    load_pfm(os.path.join(sub, "trans.pfm")),
                    load_pfm(os.path.join(sub, "weight.pfm")),
                    PatchScoreGrid.load(os.path.join(sub, "scores.json")),
                    item["round"],
                )
            except (OSError, ValueError, KeyError) as exc:
                raise PoolIntegrityError(f"{image_id}: {exc}") from exc
            pool.entries[image_id] = entry
            pool.history[image_id] = item.get("history", [])
        return pool


def verify_pool(directory):
    """Check hashes and score consistency of a persisted pool.

    Returns a list of problems; an empty list means the pool is intact.
    """
    problems = []
    path = os.path.join(directory, "manifest.json")
    try:
        with open(path) as fh:
            man = json.load(fh)
    except (OSError, ValueError) as exc:
        return [f"manifest unreadable: {exc}"]
    for image_id, item in sorted(man.get("entries", {}).items()):
        sub = os.path.join(directory, item.get("dir", ""))
        try:
            for name, digest in item["files"].items():
                if _sha256(os.path.join(sub, name)) != digest:
                    problems.append(f"{image_id}: {name} hash mismatch")
            scores = PatchScoreGrid.load(os.path.join(sub, "scores.json"))
            if scores.n != man["n"]:
                problems.append(f"{image_id}: score grid n={scores.n}, pool n={man['n']}")
            if abs(scores.mean_d - item["mean_d"]) > 1e-12 or abs(scores.mean_q - item["mean_q"]) > 1e-12:
                problems.append(f"{image_id}: manifest means disagree with scores.json")
            for name, arr in (("d", scores.d), ("q", scores.q)):
                if arr.min() < 0 or arr.max() > 1:
                    problems.append(f"{image_id}: {name} scores outside [0, 1]")
            weight = load_pfm(os.path.join(sub, "weight.pfm"))
            trans = load_pfm(os.path.join(sub, "trans.pfm"))
            pseudo = load_png(os.path.join(sub, "pseudo.png"))
            h, w = pseudo.shape[:2]
            if weight.shape != (h, w) or trans.shape != (h, w):
                problems.append(f"{image_id}: component shapes disagree")
                continue
            expected = trust_weight(scores, h, w, man["combine"]).astype(np.float32).astype(np.float64)
            if not np.array_equal(expected, weight):
                problems.append(f"{image_id}: weight map does not match stored scores")
            hist = item.get("history", [])
            for (_, d0, q0), (_, d1, q1) in zip(hist, hist[1:]):
                if d1 < d0 or q1 < q0:
                    problems.append(f"{image_id}: stored scores decreased across rounds")
        except (OSError, ValueError, KeyError) as exc:
            problems.append(f"{image_id}: {exc}")
    return problems


def pool_update(pool, image_id, candidate, round_index=0):
    """Functional spelling of :meth:`LabelPool.update`; ``candidate`` is ``(image, t)``."""
    return pool.update(image_id, candidate[0], candidate[1], round_index)


@dataclass(frozen=True)
class ForwardResult:
    tea_j: np.ndarray
    tea_t: np.ndarray
    stu_j: np.ndarray
    stu_t: np.ndarray
    aug_input: np.ndarray


def teacher_student_forward(p_real, theta_tea, theta_stu, aug_cfg, key):
    """Teacher on the clean input, student on a strongly augmented copy."""
    tea_j, tea_t = dehaze(p_real, theta_tea)
    aug = strong_augment(p_real, aug_cfg, key)
    stu_j, stu_t = dehaze(aug, theta_stu)
    return ForwardResult(tea_j, tea_t, stu_j, stu_t, aug)


def ema_update(theta_tea, theta_stu, eta=0.999):
    """``eta * teacher + (1 - eta) * student`` over the continuous parameters."""
    if not 0.0 < eta < 1.0:
        raise ValueError("eta must lie in (0, 1)")
    if theta_tea.layout() != theta_stu.layout():
        raise ValueError("teacher and student parameter layouts differ")
    vec = eta * theta_tea.to_vector() + (1.0 - eta) * theta_stu.to_vector()
    return theta_tea.from_vector(vec)


@dataclass(frozen=True)
class RoundItem:
    """Per-image output of one round: student result and pseudo label."""

    image_id: str
    stu_j: np.ndarray
    stu_t: np.ndarray
    aug_input: np.ndarray
    pseudo: LabelPoolEntry
    accepted: bool


@dataclass
class ColabatorState:
    teacher: SolverParams
    student: SolverParams
    pool: LabelPool
    aug: AugmentorConfig = field(default_factory=AugmentorConfig)
    eta: float = 0.999
    round_index: int = 0


def colabator_round(images, state):
    """Run one round over ``images`` (an iterable of ``(image_id, array)``).

    Pool updates happen in input order; augmentation keys are
    ``(image_id, round)`` so results do not depend on scheduling.
    """
    out = []
    for image_id, p in images:
        fwd = teacher_student_forward(p, state.teacher, state.student, state.aug, (image_id, state.round_index))
        entry, accepted = state.pool.update(image_id, fwd.tea_j, fwd.tea_t, state.round_index)
        out.append(RoundItem(image_id, fwd.stu_j, fwd.stu_t, fwd.aug_input, entry, accepted))
    state.round_index += 1
    return out
