"""Cooperative unfolding solver.

Each stage alternates a closed-form transmission step, a transmission
proximal mapping, a closed-form scene step and a scene proximal mapping.
The closed forms are the exact per-pixel minimisers of

    T-step:  1/2 sum_c (p_c - j_c t + t - 1)^2 + lam/2 (t - t_prev)^2
    J-step:  1/2 (p - j t + t - 1)^2 + mu/2 (j - j_prev)^2

followed by projection onto ``[t_floor, 1]`` and ``[0, 1]`` respectively.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import minimum_filter

from .image import T_FLOOR, as_grid
from .prox import PROX_BOUNDS, PROX_SCALARS, ProxSpec, apply_s_prox, apply_t_prox

__all__ = [
    "StageParams",
    "SolverParams",
    "SolverState",
    "dark_channel",
    "init_transmission",
    "tgdm_step",
    "sgdm_step",
    "t_surrogate",
    "j_surrogate",
    "data_term",
    "run_stage",
    "dehaze",
    "LAMBDA_MAX",
    "MU_MAX",
]

DEFAULT_LAMBDA = 0.1
DEFAULT_MU = 0.05
#: Upper box bounds used when parameters are tuned or blended.
LAMBDA_MAX = 1e3
MU_MAX = 1e3
MAX_STAGES = 64


@dataclass(frozen=True)
class StageParams:
    lam: float = DEFAULT_LAMBDA
    mu: float = DEFAULT_MU
    t_prox: ProxSpec = field(default_factory=ProxSpec)
    s_prox: ProxSpec = field(default_factory=ProxSpec)

    def __post_init__(self):
        for name in ("lam", "mu"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")

    def to_dict(self):
        return {
            "lambda": self.lam,
            "mu": self.mu,
            "t_prox": self.t_prox.to_dict(),
            "s_prox": self.s_prox.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            lam=float(d.get("lambda", DEFAULT_LAMBDA)),
            mu=float(d.get("mu", DEFAULT_MU)),
            t_prox=ProxSpec.from_dict(d.get("t_prox", {})),
            s_prox=ProxSpec.from_dict(d.get("s_prox", {})),
        )


@dataclass(frozen=True)
class SolverParams:
    """Full solver configuration; doubles as the tunable parameter vector.

    ``init`` is ``"dark-channel"`` or ``"constant"`` (uniform ``init_value``).
    ``raw_t_to_sgdm`` feeds the un-refined transmission to the scene step
    instead of the proximal output.
    """

    stages: tuple = field(default_factory=lambda: tuple(StageParams() for _ in range(4)))
    t_floor: float = T_FLOOR
    init: str = "dark-channel"
    init_value: float = 0.5
    raw_t_to_sgdm: bool = False

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not 0 <= len(self.stages) <= MAX_STAGES:
            raise ValueError(f"between 0 and {MAX_STAGES} stages are supported")
        if not 0 < self.t_floor < 0.5:
            raise ValueError("t_floor must lie in (0, 0.5)")
        if self.init not in ("dark-channel", "constant"):
            raise ValueError(f"unknown init mode {self.init!r}")

    @classmethod
    def default(cls, n_stages=4, lam=DEFAULT_LAMBDA, mu=DEFAULT_MU, t_prox=None, s_prox=None, **kw):
        st = StageParams(lam, mu, t_prox or ProxSpec(), s_prox or ProxSpec())
        return cls(stages=(st,) * n_stages, **kw)

    def with_stage_count(self, k):
        """Truncate or extend (repeating the last stage) to ``k`` stages."""
        stages = list(self.stages[:k])
        filler = self.stages[-1] if self.stages else StageParams()
        stages += [filler] * (k - len(stages))
        return replace(self, stages=tuple(stages))

    # -- serialisation -------------------------------------------------
    def to_dict(self):
        return {
            "stages": [s.to_dict() for s in self.stages],
            "t_floor": self.t_floor,
            "init": self.init,
            "init_value": self.init_value,
            "raw_t_to_sgdm": self.raw_t_to_sgdm,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            stages=tuple(StageParams.from_dict(s) for s in d.get("stages", [])),
            t_floor=float(d.get("t_floor", T_FLOOR)),
            init=d.get("init", "dark-channel"),
            init_value=float(d.get("init_value", 0.5)),
            raw_t_to_sgdm=bool(d.get("raw_t_to_sgdm", False)),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())

    # -- flat parameter vector -----------------------------------------
    def layout(self):
        """Structural signature: parts of the params that are not blended."""
        return (
            len(self.stages),
            self.t_floor,
            self.init,
            self.raw_t_to_sgdm,
            tuple((s.t_prox.kind, s.t_prox.radius, s.s_prox.kind, s.s_prox.radius) for s in self.stages),
        )

    def to_vector(self):
        """Flatten to ``[lam, mu, t_prox scalars..., s_prox scalars...]`` per stage."""
        out = []
        for s in self.stages:
            out += [s.lam, s.mu]
            out += [getattr(s.t_prox, k) for k in PROX_SCALARS]
            out += [getattr(s.s_prox, k) for k in PROX_SCALARS]
        return np.array(out, dtype=np.float64)

    def from_vector(self, vec):
        """Return a copy with continuous parameters taken from ``vec``."""
        vec = np.asarray(vec, dtype=np.float64)
        per = 2 + 2 * len(PROX_SCALARS)
        if vec.shape != (per * len(self.stages),):
            raise ValueError(f"parameter vector has length {vec.size}, expected {per * len(self.stages)}")
        stages = []
        m = len(PROX_SCALARS)
        for i, s in enumerate(self.stages):
            v = vec[i * per : (i + 1) * per]
            tp = replace(s.t_prox, **dict(zip(PROX_SCALARS, map(float, v[2 : 2 + m]))))
            sp = replace(s.s_prox, **dict(zip(PROX_SCALARS, map(float, v[2 + m :]))))
            stages.append(StageParams(float(v[0]), float(v[1]), tp, sp))
        return replace(self, stages=tuple(stages))

    def bounds(self):
        """Box bounds ``(lower, upper)`` aligned with :meth:`to_vector`."""
        lo, hi = [], []
        for _ in self.stages:
            lo += [0.0, 0.0]
            hi += [LAMBDA_MAX, MU_MAX]
            for _slot in range(2):
                lo += [PROX_BOUNDS[k][0] for k in PROX_SCALARS]
                hi += [PROX_BOUNDS[k][1] for k in PROX_SCALARS]
        return np.array(lo), np.array(hi)

    def active_mask(self):
        """Entries of the vector that influence the output."""
        mask = []
        for s in self.stages:
            mask += [True, True]
            for spec in (s.t_prox, s.s_prox):
                live = {
                    "identity": (),
                    "guided": ("eps", "strength"),
                    "bilateral": ("sigma_s", "sigma_r", "strength"),
                }[spec.kind]
                mask += [k in live for k in PROX_SCALARS]
        return np.array(mask)


@dataclass(frozen=True)
class SolverState:
    j: np.ndarray
    t: np.ndarray
    stage_index: int = 0


def dark_channel(img, window=15):
    """Minimum over channels and a ``window x window`` neighbourhood."""
    img = np.asarray(img, dtype=np.float64)
    per_pixel = img.min(axis=2) if img.ndim == 3 else img
    return minimum_filter(per_pixel, size=window, mode="reflect")


def init_transmission(p, mode="dark-channel", t_floor=T_FLOOR, value=0.5, omega=0.95, window=15):
    """Initial transmission estimate for a hazy image."""
    p = as_grid(p)
    if mode == "dark-channel":
        return np.clip(1.0 - omega * dark_channel(p, window), t_floor, 1.0)
    if mode == "constant":
        if not t_floor <= value <= 1.0:
            raise ValueError(f"constant init {value} outside [{t_floor}, 1]")
        return np.full(p.shape[:2], float(value))
    raise ValueError(f"unknown init mode {mode!r}")


def tgdm_step(p, j_prev, t_prev, lam, t_floor=T_FLOOR):
    """Closed-form transmission update.

    ``t = (lam*t_prev + sum_c (1-j_c)(1-p_c)) / (lam + sum_c (1-j_c)^2)``,
    clamped to ``[t_floor, 1]``.  Where the denominator vanishes (``lam == 0``
    and a white scene pixel) the previous transmission is kept.
    """
    p = np.asarray(p, dtype=np.float64)
    j_prev = np.asarray(j_prev, dtype=np.float64)
    t_prev = np.asarray(t_prev, dtype=np.float64)
    if p.shape != j_prev.shape or p.shape[:2] != t_prev.shape:
        raise ValueError("shape mismatch in transmission step")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    a = 1.0 - j_prev
    num = lam * t_prev + np.sum(a * (1.0 - p), axis=2)
    den = lam + np.sum(a * a, axis=2)
    ok = den > 0
    t = np.where(ok, num / np.where(ok, den, 1.0), t_prev)
    return np.clip(t, t_floor, 1.0)


def sgdm_step(p, j_prev, t_hat, mu):
    """Closed-form scene update ``(t(p + t - 1) + mu*j_prev) / (t^2 + mu)``, clamped to ``[0, 1]``."""
    p = np.asarray(p, dtype=np.float64)
    j_prev = np.asarray(j_prev, dtype=np.float64)
    t_hat = np.asarray(t_hat, dtype=np.float64)
    if p.shape != j_prev.shape or p.shape[:2] != t_hat.shape:
        raise ValueError("shape mismatch in scene step")
    if mu < 0:
        raise ValueError("mu must be >= 0")
    t = t_hat[:, :, None]
    return np.clip((t * (p + t - 1.0) + mu * j_prev) / (t * t + mu), 0.0, 1.0)


def t_surrogate(t, p, j_prev, t_prev, lam):
    """Per-pixel transmission sub-problem objective."""
    r = p - j_prev * t[:, :, None] + t[:, :, None] - 1.0
    return 0.5 * np.sum(r * r, axis=2) + 0.5 * lam * (t - t_prev) ** 2


def j_surrogate(j, p, t, j_prev, mu):
    """Per-pixel, per-channel scene sub-problem objective."""
    tt = t[:, :, None]
    r = p - j * tt + tt - 1.0
    return 0.5 * r * r + 0.5 * mu * (j - j_prev) ** 2


def data_term(p, j, t):
    """Data-fidelity energy ``1/2 ||P - J.T + T - 1||^2``."""
    tt = np.asarray(t)[:, :, None]
    r = p - j * tt + tt - 1.0
    return 0.5 * float(np.sum(r * r))


def run_stage(p, state, stage, t_floor=T_FLOOR, raw_t_to_sgdm=False, trace=None):
    """Advance the solver by one stage.

    If ``trace`` is a list, a dict of the intermediate quantities is appended.
    """
    t_hat = tgdm_step(p, state.j, state.t, stage.lam, t_floor)
    t_k = apply_t_prox(stage.t_prox, state.j, t_hat, t_floor)
    t_scene = t_hat if raw_t_to_sgdm else t_k
    j_hat = sgdm_step(p, state.j, t_scene, stage.mu)
    j_k = apply_s_prox(stage.s_prox, j_hat, t_k)
    if trace is not None:
        trace.append(
            dict(j_prev=state.j, t_prev=state.t, t_hat=t_hat, t=t_k, t_scene=t_scene, j_hat=j_hat, j=j_k)
        )
    return SolverState(j_k, t_k, state.stage_index + 1)


def dehaze(p, params=None, t_init=None, trace=None):
    """Run every configured stage on hazy image ``p``.

    Parameters
    ----------
    p : ndarray (H, W, C)
        Hazy input in ``[0, 1]``.
    params : SolverParams, optional
    t_init : ndarray (H, W), optional
        Overrides the configured transmission initialisation.
    trace : list, optional
        Receives one dict of intermediates per stage.

    Returns
    -------
    j : ndarray (H, W, C)
    t : ndarray (H, W)
    """
    params = params or SolverParams()
    p = as_grid(p)
    if t_init is None:
        t0 = init_transmission(p, params.init, params.t_floor, params.init_value)
    else:
        t0 = np.clip(np.asarray(t_init, dtype=np.float64), params.t_floor, 1.0)
        if t0.shape != p.shape[:2]:
            raise ValueError("t_init shape does not match image")
    state = SolverState(p, t0, 0)
    for stage in params.stages:
        state = run_stage(p, state, stage, params.t_floor, params.raw_t_to_sgdm, trace)
    return state.j, state.t
