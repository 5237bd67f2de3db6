"""Derivative-free tuning of solver parameters.

Both phases score every candidate parameter vector on exactly the same data
(mini-batch and augmentation windows are drawn once, from the seed), so
accept/reject decisions compare like with like.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from .augment import AugmentorConfig, weak_augment
from .colabator import ColabatorState, LabelPool, colabator_round, ema_update
from .iqa import image_density
from .objectives import ObjectiveConfig, coherence_loss, loss_finetune, loss_pretrain
from .solver import SolverParams, dehaze

__all__ = [
    "TunerConfig",
    "PhaseReport",
    "Sample",
    "coordinate_search",
    "nelder_mead",
    "pretrain",
    "finetune",
    "FinetuneResult",
    "sweep_stages",
    "pretrain_loss",
    "teacher_density",
    "write_trace_csv",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TunerConfig:
    method: str = "coordinate-search"
    budget: int = 200
    init_step: float = 0.25
    shrink: float = 0.5
    min_step: float = 1e-3
    seed: int = 0
    batch_size: int | None = None
    jobs: int = 1

    def __post_init__(self):
        if self.method not in ("coordinate-search", "nelder-mead"):
            raise ValueError(f"unknown tuning method {self.method!r}")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if self.init_step <= 0 or self.min_step <= 0:
            raise ValueError("steps must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class PhaseReport:
    best_params: SolverParams
    loss_trace: list = field(default_factory=list)
    accepted_moves: int = 0
    terms: list = field(default_factory=list)

    @property
    def init_loss(self):
        return self.loss_trace[0][1] if self.loss_trace else None

    @property
    def best_loss(self):
        return min(v for _, v in self.loss_trace) if self.loss_trace else None

    def best_so_far(self):
        return np.minimum.accumulate([v for _, v in self.loss_trace])

    def to_dict(self):
        return {
            "best_params": self.best_params.to_dict(),
            "loss_trace": [[int(i), float(v)] for i, v in self.loss_trace],
            "accepted_moves": self.accepted_moves,
            "init_loss": self.init_loss,
            "best_loss": self.best_loss,
        }


@dataclass(frozen=True)
class Sample:
    """A training image; ``gt`` and ``t`` are ``None`` for real (unpaired) data."""

    image_id: str
    lq: np.ndarray
    gt: np.ndarray | None = None
    t: np.ndarray | None = None


class _Budget(Exception):
    pass


class _Objective:
    """Counts evaluations, records the trace and remembers the best point."""

    def __init__(self, f, budget):
        self.f = f
        self.budget = budget
        self.trace = []
        self.terms = []
        self.best_x = None
        self.best_f = np.inf

    def __call__(self, x):
        if len(self.trace) >= self.budget:
            raise _Budget
        x = np.array(x, dtype=np.float64)
        out = self.f(x)
        if isinstance(out, dict):
            self.terms.append({"step": len(self.trace), **out})
            out = out["total"]
        v = float(out)
        if not np.isfinite(v):
            v = np.inf
        self.trace.append((len(self.trace), v))
        if v < self.best_f:
            self.best_f, self.best_x = v, x
        return v


def coordinate_search(f, x0, lower, upper, active=None, cfg=TunerConfig()):
    """Compass search with shrinking relative steps inside a box.

    Each sweep tries ``x_i +/- h * max(|x_i|, 0.01)`` for every active
    coordinate and takes the first improving move.  When a sweep makes no
    progress ``h`` is multiplied by ``cfg.shrink``; the search stops once
    ``h < cfg.min_step`` or the budget is spent.

    ``f`` returns a float, or a dict of loss terms with a ``"total"`` key.
    Returns ``(x_best, objective, accepted_moves)``; the objective holds the
    evaluation ``trace`` and per-evaluation ``terms``.
    """
    x = np.clip(np.asarray(x0, dtype=np.float64), lower, upper)
    active = np.ones(x.size, bool) if active is None else np.asarray(active, bool)
    obj = _Objective(f, cfg.budget)
    accepted = 0
    try:
        fx = obj(x)
        h = cfg.init_step
        while h >= cfg.min_step:
            improved = False
            for i in np.flatnonzero(active):
                step = h * max(abs(x[i]), 0.01)
                for sign in (1.0, -1.0):
                    cand = x.copy()
                    cand[i] = np.clip(x[i] + sign * step, lower[i], upper[i])
                    if cand[i] == x[i]:
                        continue
                    fc = obj(cand)
                    if fc < fx:
                        x, fx = cand, fc
                        accepted += 1
                        improved = True
                        break
            if not improved:
                h *= cfg.shrink
    except _Budget:
        pass
    return obj.best_x, obj, accepted


def nelder_mead(f, x0, lower, upper, active=None, cfg=TunerConfig()):
    """Bounded Nelder-Mead over the active coordinates (scipy backend)."""
    x0 = np.clip(np.asarray(x0, dtype=np.float64), lower, upper)
    active = np.ones(x0.size, bool) if active is None else np.asarray(active, bool)
    idx = np.flatnonzero(active)
    obj = _Objective(f, cfg.budget)

    def embed(z):
        x = x0.copy()
        x[idx] = np.clip(z, lower[idx], upper[idx])
        return x

    try:
        obj(x0)
        if idx.size:
            z0 = x0[idx]
            simplex = [z0]
            for k in range(idx.size):
                z = z0.copy()
                z[k] = z0[k] + cfg.init_step * max(abs(z0[k]), 0.01)
                if z[k] > upper[idx[k]]:
                    z[k] = z0[k] - cfg.init_step * max(abs(z0[k]), 0.01)
                simplex.append(z)
            minimize(
                lambda z: obj(embed(z)),
                z0,
                method="Nelder-Mead",
                bounds=list(zip(lower[idx], upper[idx])),
                options={"initial_simplex": np.array(simplex), "maxfev": cfg.budget, "xatol": cfg.min_step, "fatol": 0.0},
            )
    except _Budget:
        pass
    vals = [v for _, v in obj.trace]
    accepted = int(np.sum(np.array(vals[1:]) < np.minimum.accumulate(vals)[:-1])) if vals else 0
    return obj.best_x, obj, accepted


def _search(f, init, cfg):
    lower, upper = init.bounds()
    x0 = init.to_vector()
    method = coordinate_search if cfg.method == "coordinate-search" else nelder_mead
    x, obj, accepted = method(lambda v: f(init.from_vector(v)), x0, lower, upper, init.active_mask(), cfg)
    return PhaseReport(init.from_vector(x), obj.trace, accepted, obj.terms)


def _pmap(fn, items, jobs):
    if jobs <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _select_batch(items, cfg, salt=0):
    if cfg.batch_size is None or cfg.batch_size >= len(items):
        return list(items)
    rng = np.random.default_rng([cfg.seed, salt])
    pick = np.sort(rng.choice(len(items), cfg.batch_size, replace=False))
    return [items[i] for i in pick]


def _weak_views(samples, aug, salt):
    out = []
    for s in samples:
        lq, gt, t = weak_augment(s.lq, s.gt, s.t, cfg=aug, key=(s.image_id, "weak", salt))
        out.append((lq, gt, t))
    return out


def _mean_terms(rows):
    return {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}


def pretrain_loss(params, views, obj_cfg=ObjectiveConfig(), jobs=1):
    """Mean pre-training loss terms of ``params`` over ``(lq, gt, t)`` views.

    Returns a dict with ``L_rec``, ``L_coh``, ``L_dens`` and ``total``.
    """

    def one(view):
        lq, gt, _ = view
        hq, t_hq = dehaze(lq, params)
        return loss_pretrain(lq, hq, t_hq, gt, obj_cfg, return_terms=True)

    return _mean_terms(_pmap(one, views, jobs))


def pretrain(corpus, init=None, obj_cfg=ObjectiveConfig(), cfg=TunerConfig(), aug=AugmentorConfig()):
    """Tune ``init`` on synthetic ``Sample`` triples; returns a :class:`PhaseReport`."""
    if not corpus:
        raise ValueError("pre-training needs a non-empty corpus")
    init = init or SolverParams()
    views = _weak_views(_select_batch(corpus, cfg), aug, "pretrain")
    report = _search(lambda p: pretrain_loss(p, views, obj_cfg, cfg.jobs), init, cfg)
    log.info("pretrain: %.6g -> %.6g in %d evaluations", report.init_loss, report.best_loss, len(report.loss_trace))
    return report


@dataclass
class FinetuneResult:
    teacher: SolverParams
    student: SolverParams
    pool: LabelPool
    reports: list
    density_before: float
    density_after: float
    round_items: list = field(default_factory=list)

    def to_dict(self):
        return {
            "teacher": self.teacher.to_dict(),
            "student": self.student.to_dict(),
            "rounds": [r.to_dict() for r in self.reports],
            "teacher_density_before": self.density_before,
            "teacher_density_after": self.density_after,
        }


def teacher_density(params, real, jobs=1):
    """Mean whole-image density of the dehazed real images."""
    return float(np.mean(_pmap(lambda s: image_density(dehaze(s.lq, params)[0]), real, jobs)))


def finetune(
    real,
    synthetic,
    theta_init,
    pool=None,
    obj_cfg=ObjectiveConfig(),
    cfg=TunerConfig(),
    aug=AugmentorConfig(),
    rounds=3,
    eta=0.999,
):
    """Alternate pseudo-label refresh, student tuning and teacher EMA.

    Each round: (a) one Colabator pass over ``real`` updates the pool;
    (b) the student is tuned on the mixed objective against the pool labels;
    (c) the teacher is blended towards the student.
    """
    if not real:
        raise ValueError("fine-tuning needs at least one real image")
    pool = pool if pool is not None else LabelPool()
    state = ColabatorState(theta_init, theta_init, pool, aug, eta)
    before = teacher_density(theta_init, real, cfg.jobs)
    reports, all_items = [], []
    for r in range(rounds):
        items = colabator_round([(s.image_id, s.lq) for s in real], state)
        all_items.append(items)
        real_terms = [
            {"aug_input": it.aug_input, "pseudo": it.pseudo.pseudo_image, "w": it.pseudo.weight} for it in items
        ]
        syn_views = _weak_views(_select_batch(synthetic, cfg, salt=r), aug, r) if synthetic else []
        n = max(len(real_terms), len(syn_views))

        def objective(params, real_terms=real_terms, syn_views=syn_views, n=n):
            def one(k):
                rt = real_terms[k % len(real_terms)]
                hq, t_hq = dehaze(rt["aug_input"], params)
                syn = None
                if syn_views:
                    lq, gt, _ = syn_views[k % len(syn_views)]
                    syn = {"hq": dehaze(lq, params)[0], "gt": gt}
                return loss_finetune(
                    {"aug_input": rt["aug_input"], "hq": hq, "t_hq": t_hq, "pseudo": rt["pseudo"]},
                    syn,
                    rt["w"],
                    obj_cfg,
                    return_terms=True,
                )

            return _mean_terms(_pmap(one, range(n), cfg.jobs))

        round_cfg = TunerConfig(**{**cfg.to_dict(), "seed": cfg.seed + r})
        report = _search(objective, state.student, round_cfg)
        reports.append(report)
        state.student = report.best_params
        state.teacher = ema_update(state.teacher, state.student, eta)
        log.info("finetune round %d: student loss %.6g -> %.6g", r, report.init_loss, report.best_loss)
    after = teacher_density(state.teacher, real, cfg.jobs) if rounds else before
    return FinetuneResult(state.teacher, state.student, pool, reports, before, after, all_items)


def sweep_stages(corpus, stage_counts=(1, 2, 4, 6), base=None, obj_cfg=ObjectiveConfig(), cfg=TunerConfig(), aug=AugmentorConfig()):
    """Pre-train once per stage count and tabulate the outcome.

    Returns a list of dict rows with keys ``stages``, ``init_loss``,
    ``final_loss``, ``evaluations``, ``mean_density`` and ``mean_coherence``.
    """
    base = base or SolverParams()
    rows = []
    for k in stage_counts:
        report = pretrain(corpus, base.with_stage_count(k), obj_cfg, cfg, aug)
        outs = [dehaze(s.lq, report.best_params) for s in corpus]
        rows.append(
            {
                "stages": int(k),
                "init_loss": report.init_loss,
                "final_loss": report.best_loss,
                "evaluations": len(report.loss_trace),
                "mean_density": float(np.mean([image_density(j) for j, _ in outs])),
                "mean_coherence": float(np.mean([coherence_loss(s.lq, j, t) for s, (j, t) in zip(corpus, outs)])),
            }
        )
    return rows


def write_trace_csv(path, trace):
    """Write ``(eval_index, loss)`` pairs, or dict rows, as CSV."""
    with open(path, "w", newline="") as fh:
        if not trace:
            return
        if isinstance(trace[0], dict):
            writer = csv.DictWriter(fh, fieldnames=list(trace[0]))
            writer.writeheader()
            writer.writerows(trace)
        else:
            writer = csv.writer(fh)
            writer.writerow(["eval_index", "loss"])
            writer.writerows(trace)
