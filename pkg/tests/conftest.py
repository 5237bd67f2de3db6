import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from corun.asm import HazeSynthesisConfig, item_seed, synthesize_pair  # noqa: E402
from corun.scenes import make_depth, make_real_hazy, make_scene  # noqa: E402
from corun.tuner import Sample  # noqa: E402


def synthetic_pairs(count, size=64, seed=1):
    """Hazy/clear/transmission triples built from the procedural scenes."""
    cfg = HazeSynthesisConfig(seed=seed)
    out = []
    for i in range(count):
        rng = np.random.default_rng(item_seed(7, i))
        scene = make_scene(rng, size, size)
        depth = make_depth(rng, size, size)
        hazy, t, _, _ = synthesize_pair(scene, depth, cfg, i)
        out.append(Sample(f"syn{i:03d}", hazy, scene, t))
    return out


def real_images(count, size=64, seed=8):
    out = []
    for i in range(count):
        rng = np.random.default_rng(item_seed(seed, i))
        out.append(Sample(f"real{i:03d}", make_real_hazy(rng, size, size)))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def pairs64():
    return synthetic_pairs(4, 64)


ACCEPTANCE = []


def record_verdict(name, ok, detail=""):
    """Record and print one acceptance verdict line."""
    line = f"{name} {'PASS' if ok else 'FAIL'} {detail}".rstrip()
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0].split("-")[1])):
            terminalreporter.write_line(line)
