import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corun.asm import (
    AirlightSpec,
    HazeSynthesisConfig,
    compose,
    compose_simplified,
    invert_exact,
    item_seed,
    normalize_depth,
    synthesize_pair,
    transmission_from_depth,
)
from corun.scenes import make_depth, make_scene


def grid(v, shape=(3, 4, 3)):
    return np.full(shape, float(v))


def test_compose_without_haze_returns_scene(rng):
    j = rng.random((5, 6, 3))
    assert np.array_equal(compose(j, np.ones((5, 6))), j)


def test_compose_opaque_gives_airlight():
    out = compose(grid(0.3), np.zeros((3, 4)), AirlightSpec((1.0, 1.0, 1.0)))
    assert np.all(out == 1.0)


def test_compose_arithmetic():
    out = compose(grid(0.2), np.full((3, 4), 0.5), AirlightSpec((1.0, 1.0, 1.0)))
    assert np.allclose(out, 0.6, atol=1e-15)


def test_compose_tinted_airlight():
    out = compose(grid(0.0), np.full((3, 4), 0.5), AirlightSpec((0.9, 0.85, 0.8)))
    assert np.allclose(out[0, 0], [0.45, 0.425, 0.4])


def test_simplified_white_scene_invariant(rng):
    t = rng.uniform(0.05, 1, (3, 4))
    assert np.all(compose_simplified(grid(1.0), t) == 1.0)


def test_simplified_clear_air_and_black_scene(rng):
    j = rng.random((3, 4, 3))
    assert np.allclose(compose_simplified(j, np.ones((3, 4))), j, rtol=0, atol=1e-15)
    assert np.allclose(compose_simplified(grid(0.0), np.full((3, 4), 0.5)), 0.5)


def test_invert_exact_values():
    assert np.allclose(invert_exact(grid(0.6), np.full((3, 4), 0.5)), 0.2)
    assert np.all(invert_exact(grid(1.0), np.full((3, 4), 0.3)) == 1.0)


def test_invert_exact_rejects_subfloor():
    with pytest.raises(ValueError):
        invert_exact(grid(0.6), np.full((3, 4), 0.01))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_invert_is_inverse_of_compose(seed):
    rng = np.random.default_rng(seed)
    j = rng.uniform(0.0, 1.0, (6, 5, 3))
    t = rng.uniform(0.1, 1.0, (6, 5))
    assert np.max(np.abs(invert_exact(compose_simplified(j, t), t) - j)) <= 1e-12


def test_transmission_from_depth_values():
    assert transmission_from_depth(np.zeros((2, 2)), 1.0)[0, 0] == 1.0
    assert transmission_from_depth(np.full((2, 2), np.log(2)), 1.0)[0, 0] == pytest.approx(0.5, abs=1e-15)
    assert transmission_from_depth(np.full((2, 2), 2.0), 0.5)[0, 0] == pytest.approx(0.36787944117144233, abs=1e-15)


def test_transmission_monotone_and_floored():
    d = np.linspace(0, 50, 101).reshape(1, -1)
    t = transmission_from_depth(d, 1.5)
    assert np.all(np.diff(t) <= 0)
    assert t[0, -1] == 0.05
    assert np.all(transmission_from_depth(d, 1.5) <= transmission_from_depth(d, 0.3))


def test_transmission_rejects_bad_depth():
    with pytest.raises(ValueError):
        transmission_from_depth(-np.ones((2, 2)), 1.0)
    with pytest.raises(ValueError):
        transmission_from_depth(np.ones((2, 2)), 0.0)


def test_normalize_depth():
    assert np.max(normalize_depth(np.array([[0.0, 2.0], [4.0, 8.0]]))) == 1.0
    assert np.all(normalize_depth(np.zeros((2, 2))) == 0)


def test_airlight_validation():
    with pytest.raises(ValueError):
        AirlightSpec((0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        AirlightSpec((1.0, 0.85, 0.85))


def test_item_seed_stable_for_strings():
    assert item_seed(3, "abc") == item_seed(3, "abc")
    assert item_seed(3, "abc") != item_seed(3, "abd")


def _scene_depth(i, size=32):
    rng = np.random.default_rng(item_seed(11, i))
    return make_scene(rng, size, size), make_depth(rng, size, size)


def test_synthesis_deterministic():
    scene, depth = _scene_depth(0)
    a = synthesize_pair(scene, depth, HazeSynthesisConfig(seed=5), 3)
    b = synthesize_pair(scene, depth, HazeSynthesisConfig(seed=5), 3)
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()
    assert a[2] == b[2] and a[3] == b[3]


def test_synthesis_recomposition_exact():
    cfg = HazeSynthesisConfig(seed=2, airlight_range=(0.8, 1.0), chroma_jitter=0.03)
    for i in range(5):
        scene, depth = _scene_depth(i)
        hazy, t, a, beta = synthesize_pair(scene, depth, cfg, i)
        assert cfg.beta_range[0] <= beta <= cfg.beta_range[1]
        assert np.max(np.abs(compose(scene, t, a) - hazy)) <= 1e-12


def test_synthesis_default_is_simplified_model():
    scene, depth = _scene_depth(1)
    hazy, t, a, _ = synthesize_pair(scene, depth, HazeSynthesisConfig(), 0)
    assert a.a == (1.0, 1.0, 1.0)
    assert np.max(np.abs(compose_simplified(scene, t) - hazy)) <= 1e-12


def test_synthesis_larger_beta_thickens_haze():
    scene, depth = _scene_depth(2)
    _, t_lo, _, _ = synthesize_pair(scene, depth, HazeSynthesisConfig(beta_range=(0.3, 0.3)))
    _, t_hi, _, _ = synthesize_pair(scene, depth, HazeSynthesisConfig(beta_range=(1.5, 1.5)))
    assert np.all(t_hi <= t_lo)
    far = np.unravel_index(np.argmax(depth), depth.shape)
    assert t_hi[far] == pytest.approx(np.exp(-1.5))


def test_synthesis_config_round_trip():
    cfg = HazeSynthesisConfig(beta_range=(0.5, 1.0), seed=9)
    assert HazeSynthesisConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        HazeSynthesisConfig(airlight_range=(0.4, 1.0))
