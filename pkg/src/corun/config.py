"""Run configuration: one JSON document plus ``key=value`` overrides."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field, replace

from .asm import HazeSynthesisConfig
from .augment import AugmentorConfig
from .objectives import ObjectiveConfig
from .solver import SolverParams
from .tuner import TunerConfig

__all__ = ["ConfigError", "RunConfig", "apply_overrides", "load_config"]

SEED_ENV = "CORUN_SEED"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    paths: dict = field(default_factory=dict)
    solver: SolverParams = field(default_factory=SolverParams)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    augment: AugmentorConfig = field(default_factory=AugmentorConfig)
    tuner: TunerConfig = field(default_factory=TunerConfig)
    synthesis: HazeSynthesisConfig = field(default_factory=HazeSynthesisConfig)
    eta: float = 0.999
    n_patches: int = 8
    accept_mode: str = "mean"
    weight_combine: str = "product"
    rounds: int = 3
    stage_counts: tuple = (1, 2, 4, 6)
    seed: int = 0

    def path(self, key, default=None):
        return self.paths.get(key, default)

    def seeded(self):
        """Copy with the top-level seed pushed into every seeded sub-config."""
        return replace(
            self,
            augment=replace(self.augment, seed=self.seed),
            tuner=replace(self.tuner, seed=self.seed),
            synthesis=replace(self.synthesis, seed=self.seed),
        )

    def to_dict(self):
        return {
            "paths": dict(self.paths),
            "solver": self.solver.to_dict(),
            "objective": self.objective.to_dict(),
            "augment": self.augment.to_dict(),
            "tuner": self.tuner.to_dict(),
            "synthesis": self.synthesis.to_dict(),
            "eta": self.eta,
            "n_patches": self.n_patches,
            "accept_mode": self.accept_mode,
            "weight_combine": self.weight_combine,
            "rounds": self.rounds,
            "stage_counts": list(self.stage_counts),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            kw = {}
            if "paths" in d:
                kw["paths"] = dict(d["paths"])
            if "solver" in d:
                kw["solver"] = SolverParams.from_dict(d["solver"])
            if "objective" in d:
                kw["objective"] = ObjectiveConfig.from_dict(d["objective"])
            if "augment" in d:
                kw["augment"] = AugmentorConfig.from_dict(d["augment"])
            if "tuner" in d:
                kw["tuner"] = TunerConfig.from_dict(d["tuner"])
            if "synthesis" in d:
                kw["synthesis"] = HazeSynthesisConfig.from_dict(d["synthesis"])
            for k in ("eta", "n_patches", "accept_mode", "weight_combine", "rounds", "seed"):
                if k in d:
                    kw[k] = d[k]
            if "stage_counts" in d:
                kw["stage_counts"] = tuple(int(v) for v in d["stage_counts"])
            cfg = cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if not 0 < cfg.eta < 1:
            raise ConfigError("eta must lie in (0, 1)")
        if cfg.accept_mode not in ("mean", "dominance"):
            raise ConfigError(f"unknown accept_mode {cfg.accept_mode!r}")
        if cfg.weight_combine not in ("product", "sum"):
            raise ConfigError(f"unknown weight_combine {cfg.weight_combine!r}")
        if cfg.n_patches < 1 or cfg.rounds < 0:
            raise ConfigError("n_patches must be >= 1 and rounds >= 0")
        return cfg


def _parse_value(text):
    try:
        return json.loads(text)
    except ValueError:
        return text


def apply_overrides(data, overrides):
    """Set dotted ``key=value`` pairs in a nested dict (values parsed as JSON when possible)."""
    data = copy.deepcopy(data)
    for item in overrides or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not key=value")
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            if isinstance(node, list):
                node = node[int(part)]
            else:
                node = node.setdefault(part, {})
        last = parts[-1]
        if isinstance(node, list):
            node[int(last)] = _parse_value(value)
        else:
            node[last] = _parse_value(value)
    return data


def load_config(path=None, overrides=(), env=None):
    """Build a :class:`RunConfig` from a JSON file, overrides and ``CORUN_SEED``."""
    env = os.environ if env is None else env
    data = RunConfig().to_dict()
    if path:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        data = _merge(data, user)
    data = apply_overrides(data, overrides)
    if env.get(SEED_ENV):
        try:
            data["seed"] = int(env[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
    return RunConfig.from_dict(data).seeded()


def _merge(base, user):
    out = dict(base)
    for k, v in user.items():
        if k in ("solver", "augment") or not isinstance(v, dict) or not isinstance(out.get(k), dict):
            # whole-document sections: stage lists and op lists replace wholesale
            out[k] = v
        else:
            out[k] = _merge(out[k], v)
    return out
