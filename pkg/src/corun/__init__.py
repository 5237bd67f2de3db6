"""Cooperative unfolding dehazing with coherence-based pseudo-labelling."""

from .asm import AirlightSpec, HazeSynthesisConfig, compose, compose_simplified, invert_exact, synthesize_pair
from .image import load_pfm, load_png, partition, save_pfm, save_png
from .prox import ProxSpec
from .solver import SolverParams, StageParams, dehaze

__version__ = "0.1.0"

__all__ = [
    "AirlightSpec",
    "HazeSynthesisConfig",
    "ProxSpec",
    "SolverParams",
    "StageParams",
    "compose",
    "compose_simplified",
    "dehaze",
    "invert_exact",
    "load_pfm",
    "load_png",
    "partition",
    "save_pfm",
    "save_png",
    "synthesize_pair",
]
