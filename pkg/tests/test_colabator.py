import json
import os

import numpy as np
import pytest

import corun.colabator as colab
from corun.augment import AugmentorConfig, StrongOp
from corun.colabator import (
    ColabatorState,
    LabelPool,
    PoolIntegrityError,
    colabator_round,
    ema_update,
    pool_update,
    teacher_student_forward,
    verify_pool,
)
from corun.iqa import PatchScoreGrid
from corun.prox import ProxSpec
from corun.solver import SolverParams, dehaze


def grid(d, q, n=2):
    return PatchScoreGrid(n, np.full((n, n), float(d)), np.full((n, n), float(q)))


@pytest.fixture
def scripted(monkeypatch):
    """Make the pool score candidates by a value stored in pixel (0, 0)."""
    table = {}

    def fake(img, n=8):
        return table[round(float(img[0, 0, 0]), 6)]

    monkeypatch.setattr(colab, "score_image", fake)
    return table


def cand(v, size=16):
    img = np.full((size, size, 3), 0.5)
    img[0, 0, 0] = v
    return img, np.full((size, size), 0.7)


def test_first_candidate_accepted(rng):
    pool = LabelPool(n=4)
    entry, accepted = pool.update("a", rng.random((32, 32, 3)), np.full((32, 32), 0.5))
    assert accepted and len(pool) == 1 and entry is pool["a"]
    assert entry.weight.shape == (32, 32)


def test_worse_candidate_rejected(scripted):
    scripted[0.1] = grid(0.6, 0.6)
    scripted[0.2] = grid(0.5, 0.9)
    scripted[0.3] = grid(0.7, 0.7)
    pool = LabelPool(n=2)
    first, _ = pool_update(pool, "a", cand(0.1))
    back, accepted = pool_update(pool, "a", cand(0.2), 1)
    assert not accepted and back is first
    better, accepted = pool_update(pool, "a", cand(0.3), 2)
    assert accepted and better.round == 2


def test_dominance_mode_needs_every_patch(scripted):
    scripted[0.1] = grid(0.5, 0.5)
    mixed = grid(0.9, 0.9)
    mixed.d[0, 0] = 0.4
    scripted[0.2] = mixed
    pool = LabelPool(n=2, mode="dominance")
    pool.update("a", *cand(0.1))
    assert not pool.update("a", *cand(0.2))[1]
    assert LabelPool(n=2).update("a", *cand(0.1))[1]


def test_stored_scores_monotone_over_random_sequences(rng):
    for seq in range(100):
        pool = LabelPool(n=2)
        for r in range(6):
            img = np.clip(rng.random((16, 16, 3)) * rng.uniform(0.2, 1), 0, 1)
            pool.update("x", img, np.full((16, 16), 0.5), r)
        hist = pool.history["x"]
        for (_, d0, q0), (_, d1, q1) in zip(hist, hist[1:]):
            assert d1 > d0 and q1 > q0


def test_ema_arithmetic():
    tea = SolverParams.default(2, lam=1.0)
    stu = SolverParams.default(2, lam=0.0)
    out = ema_update(tea, stu, 0.9)
    assert all(abs(s.lam - 0.9) <= 1e-12 for s in out.stages)
    assert ema_update(tea, tea, 0.9) == tea


def test_ema_near_one_barely_moves():
    tea = SolverParams.default(1, lam=1.0, mu=0.2)
    stu = SolverParams.default(1, lam=0.0, mu=0.9)
    out = ema_update(tea, stu, 0.999999)
    delta = np.abs(stu.to_vector() - tea.to_vector())
    assert np.all(np.abs(out.to_vector() - tea.to_vector()) <= 1e-6 * delta + 1e-15)


def test_ema_requires_matching_layout():
    with pytest.raises(ValueError):
        ema_update(SolverParams.default(2), SolverParams.default(3), 0.9)
    with pytest.raises(ValueError):
        ema_update(SolverParams.default(1, t_prox=ProxSpec("guided")), SolverParams.default(1), 0.9)
    with pytest.raises(ValueError):
        ema_update(SolverParams.default(1), SolverParams.default(1), 1.0)


def test_forward_equal_params_no_augment_identical(rng):
    p = rng.random((32, 32, 3))
    theta = SolverParams.default(2)
    fwd = teacher_student_forward(p, theta, theta, AugmentorConfig().without_strong(), ("a", 0))
    assert np.array_equal(fwd.tea_j, fwd.stu_j) and np.array_equal(fwd.tea_t, fwd.stu_t)


def test_forward_augment_changes_student_input(rng):
    p = rng.random((32, 32, 3))
    theta = SolverParams.default(2)
    cfg = AugmentorConfig((StrongOp("brightness", 1.0, 0.7, 0.8),))
    fwd = teacher_student_forward(p, theta, theta, cfg, ("a", 0))
    assert not np.array_equal(fwd.aug_input, p)
    again = teacher_student_forward(p, theta, theta, cfg, ("a", 0))
    assert again.stu_j.tobytes() == fwd.stu_j.tobytes()


def test_round_repeated_ids_single_entry(scripted):
    scripted[0.1] = grid(0.5, 0.5)
    scripted[0.2] = grid(0.6, 0.6)
    pool = LabelPool(n=2)
    theta = SolverParams(stages=())  # zero stages: output equals input
    state = ColabatorState(theta, theta, pool, AugmentorConfig().without_strong())
    colabator_round([("a", cand(0.1)[0]), ("a", cand(0.2)[0])], state)
    assert len(pool) == 1
    assert pool["a"].pseudo_image[0, 0, 0] == 0.2


def test_improving_teacher_raises_pool_scores(scripted):
    scripted[0.1] = grid(0.4, 0.4)
    scripted[0.2] = grid(0.6, 0.7)
    pool = LabelPool(n=2)
    theta = SolverParams(stages=())
    state = ColabatorState(theta, theta, pool, AugmentorConfig().without_strong())
    colabator_round([("a", cand(0.1)[0])], state)
    first = pool["a"].scores
    colabator_round([("a", cand(0.2)[0])], state)
    second = pool["a"].scores
    assert second.mean_d >= first.mean_d and second.mean_q >= first.mean_q
    assert state.round_index == 2


def test_disabled_augment_student_matches_pseudo(rng):
    pool = LabelPool(n=4)
    theta = SolverParams.default(2)
    state = ColabatorState(theta, theta, pool, AugmentorConfig().without_strong())
    p = rng.random((32, 32, 3))
    (item,) = colabator_round([("a", p)], state)
    assert item.accepted
    assert np.array_equal(item.stu_j, item.pseudo.pseudo_image)
    assert np.array_equal(item.stu_j, dehaze(p, theta)[0])


# -- persistence ------------------------------------------------------------
def _persisted_pool(tmp_path, rng, count=2):
    pool = LabelPool(tmp_path / "pool", n=4)
    for i in range(count):
        pool.update(f"img{i}", rng.random((32, 32, 3)), rng.uniform(0.1, 1, (32, 32)))
    return pool


def test_pool_persists_and_reopens(tmp_path, rng):
    pool = _persisted_pool(tmp_path, rng)
    d = tmp_path / "pool"
    assert sorted(os.listdir(d / "img0")) == sorted(colab.POOL_FILES)
    back = LabelPool.open(d)
    assert set(back.entries) == {"img0", "img1"}
    e0, b0 = pool["img0"], back["img0"]
    assert np.array_equal(b0.pseudo_t, e0.pseudo_t.astype(np.float32))
    assert b0.scores.mean_d == e0.scores.mean_d
    assert verify_pool(d) == []


def test_open_missing_manifest_is_empty(tmp_path):
    assert len(LabelPool.open(tmp_path)) == 0


def test_verify_detects_tampering(tmp_path, rng):
    _persisted_pool(tmp_path, rng)
    d = tmp_path / "pool"
    w = d / "img1" / "weight.pfm"
    raw = bytearray(w.read_bytes())
    raw[-1] ^= 0xFF
    w.write_bytes(bytes(raw))
    problems = verify_pool(d)
    assert any("img1" in p and "hash" in p for p in problems)


def test_verify_detects_manifest_edits(tmp_path, rng):
    _persisted_pool(tmp_path, rng)
    man_path = tmp_path / "pool" / "manifest.json"
    man = json.loads(man_path.read_text())
    man["entries"]["img0"]["mean_d"] += 0.1
    man_path.write_text(json.dumps(man))
    assert any("means" in p for p in verify_pool(tmp_path / "pool"))


def test_verify_unreadable_manifest(tmp_path):
    (tmp_path / "manifest.json").write_text("{not json")
    assert verify_pool(tmp_path)


def test_open_missing_file_raises(tmp_path, rng):
    _persisted_pool(tmp_path, rng)
    os.remove(tmp_path / "pool" / "img0" / "trans.pfm")
    with pytest.raises(PoolIntegrityError):
        LabelPool.open(tmp_path / "pool")
