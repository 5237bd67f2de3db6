"""Acceptance criteria AC-1 .. AC-10, one verdict line each."""

import csv
import json
import os
import time

import numpy as np
import pytest

from corun.asm import compose_simplified, invert_exact
from corun.augment import AugmentorConfig
from corun.cli import cmd_finetune, cmd_synthesize, cmd_sweep
from corun.colabator import LabelPool, ema_update, verify_pool
from corun.config import load_config
from corun.image import load_pfm, save_pfm
from corun.iqa import density_score
from corun.objectives import coherence_loss
from corun.prox import ProxSpec
from corun.scenes import make_scene, write_scene_dir
from corun.augment import strong_augment, weak_augment
from corun.solver import (
    SolverParams,
    StageParams,
    dehaze,
    j_surrogate,
    sgdm_step,
    t_surrogate,
    tgdm_step,
)
from corun.tuner import TunerConfig, finetune, pretrain, pretrain_loss
from conftest import real_images, record_verdict, synthetic_pairs
from oracles import golden_section, j_objective, t_objective

T_FLOOR = 0.05


def test_ac1_closed_forms_match_oracle():
    rng = np.random.default_rng(101)
    n = 1000
    start = time.perf_counter()
    p = rng.random((n, 3))
    j = rng.random((n, 3))
    t_prev = rng.uniform(T_FLOOR, 1.0, n)
    lam = 10 ** rng.uniform(-2, 2, n)
    # lambda differs per tuple, so evaluate one pixel at a time
    t_cf = np.array([tgdm_step(p[i].reshape(1, 1, 3), j[i].reshape(1, 1, 3), t_prev[i].reshape(1, 1), lam[i])[0, 0]
                     for i in range(n)])
    t_gs = golden_section(t_objective(p, j, t_prev, lam), np.full(n, T_FLOOR), np.ones(n))
    err_t = np.max(np.abs(t_cf - t_gs))

    pj = rng.random(n)
    j_prev = rng.random(n)
    t_hat = rng.uniform(0.1, 1.0, n)
    mu = 10 ** rng.uniform(-2, 2, n)
    j_cf = np.array([sgdm_step(np.full((1, 1, 1), pj[i]), np.full((1, 1, 1), j_prev[i]), np.full((1, 1), t_hat[i]), mu[i])[0, 0, 0]
                     for i in range(n)])
    j_gs = golden_section(j_objective(pj, t_hat, j_prev, mu), np.zeros(n), np.ones(n))
    err_j = np.max(np.abs(j_cf - j_gs))

    # stationarity of the unclamped solutions: analytic derivative of each sub-problem
    r = p - j * t_cf[:, None] + t_cf[:, None] - 1.0
    grad_t = np.sum(r * (1.0 - j), axis=1) + lam * (t_cf - t_prev)
    free_t = (t_cf > T_FLOOR) & (t_cf < 1.0)
    rj = pj - j_cf * t_hat + t_hat - 1.0
    grad_j = -rj * t_hat + mu * (j_cf - j_prev)
    free_j = (j_cf > 0.0) & (j_cf < 1.0)
    stat = max(np.max(np.abs(grad_t[free_t])), np.max(np.abs(grad_j[free_j])))
    elapsed = time.perf_counter() - start

    ok = err_t <= 1e-6 and err_j <= 1e-6 and stat <= 1e-8 and elapsed <= 5.0 and free_t.sum() > 100 and free_j.sum() > 100
    assert record_verdict(
        "AC-1", ok,
        f"max|t-oracle|={err_t:.2e} max|j-oracle|={err_j:.2e} stationarity={stat:.2e} "
        f"free=({free_t.sum()},{free_j.sum()})/{n} time={elapsed:.2f}s",
    )


def test_ac2_round_trip_and_coherence():
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(100):
        j = rng.random((16, 16, 3))
        t = rng.uniform(0.1, 1.0, (16, 16))
        worst = max(worst, float(np.max(np.abs(invert_exact(compose_simplified(j, t), t) - j))))
    coh = max(coherence_loss(s.lq, s.gt, s.t) for s in synthetic_pairs(10, 64))
    ok = worst <= 1e-12 and coh <= 1e-12
    assert record_verdict("AC-2", ok, f"round-trip max err={worst:.2e} max coherence={coh:.2e}")


def test_ac3_convergence_with_known_transmission():
    pairs = synthetic_pairs(10, 128)
    params = SolverParams.default(50, lam=1e12, mu=0.01)
    start = time.perf_counter()
    errs = []
    for s in pairs:
        j, _ = dehaze(s.lq, params, t_init=s.t)
        mask = s.t >= 0.1
        errs.append(float(np.mean(np.abs(j - invert_exact(s.lq, s.t))[mask])))
    elapsed = time.perf_counter() - start
    ok = max(errs) <= 1e-2 and elapsed <= 30.0
    assert record_verdict("AC-3", ok, f"worst mean-L1={max(errs):.2e} time={elapsed:.2f}s")


def test_ac4_surrogate_descent():
    rng = np.random.default_rng(404)
    kinds = [ProxSpec(), ProxSpec("guided", radius=2), ProxSpec("bilateral", radius=2)]
    worst = -np.inf
    for run in range(20):
        stages = tuple(
            StageParams(float(10 ** rng.uniform(-2, 1)), float(10 ** rng.uniform(-2, 1)),
                        kinds[rng.integers(3)], kinds[rng.integers(3)])
            for _ in range(4)
        )
        trace = []
        p = rng.random((24, 24, 3))
        dehaze(p, SolverParams(stages=stages), trace=trace)
        for st, rec in zip(stages, trace):
            inc_t = t_surrogate(rec["t_hat"], p, rec["j_prev"], rec["t_prev"], st.lam) - t_surrogate(
                rec["t_prev"], p, rec["j_prev"], rec["t_prev"], st.lam)
            inc_j = j_surrogate(rec["j_hat"], p, rec["t_scene"], rec["j_prev"], st.mu) - j_surrogate(
                rec["j_prev"], p, rec["t_scene"], rec["j_prev"], st.mu)
            worst = max(worst, float(inc_t.max()), float(inc_j.max()))
    ok = worst <= 1e-12
    assert record_verdict("AC-4", ok, f"largest per-pixel increase={worst:.2e} over 20 runs x 4 stages")


def test_ac5_pretraining_improves():
    corpus = synthetic_pairs(10, 128)
    init = SolverParams()
    start = time.perf_counter()
    report = pretrain(corpus, init, cfg=TunerConfig(budget=150), aug=AugmentorConfig())
    views = [(s.lq, s.gt, s.t) for s in corpus]
    before = pretrain_loss(init, views)["total"]
    after = pretrain_loss(report.best_params, views)["total"]
    elapsed = time.perf_counter() - start
    ok = after < before and elapsed <= 600
    assert record_verdict("AC-5", ok, f"mean L_pre {before:.4f} -> {after:.4f} time={elapsed:.1f}s")


def test_ac6_colabator_monotone_and_improves():
    real = real_images(10, 128)
    synthetic = synthetic_pairs(10, 128)
    pool = LabelPool()
    start = time.perf_counter()
    res = finetune(real, synthetic, SolverParams(), pool, cfg=TunerConfig(budget=40), rounds=3)
    elapsed = time.perf_counter() - start
    monotone = all(
        d1 >= d0 and q1 >= q0
        for hist in pool.history.values()
        for (_, d0, q0), (_, d1, q1) in zip(hist, hist[1:])
    )
    accepted = sum(len(h) for h in pool.history.values())
    ok = monotone and len(pool) == 10 and res.density_after <= res.density_before and elapsed <= 1800
    assert record_verdict(
        "AC-6", ok,
        f"pool monotone={monotone} accepted={accepted} teacher density {res.density_before:.5f} -> "
        f"{res.density_after:.5f} time={elapsed:.1f}s",
    )


def test_ac7_ema_and_augment_identities():
    tea = SolverParams.default(3, lam=1.0, mu=0.3, t_prox=ProxSpec("guided", eps=0.02))
    stu = SolverParams.default(3, lam=0.0, mu=0.1, t_prox=ProxSpec("guided", eps=0.01))
    out = ema_update(tea, stu, 0.9)
    err = max(
        abs(out.stages[0].lam - 0.9),
        abs(out.stages[0].mu - (0.9 * 0.3 + 0.1 * 0.1)),
        abs(out.stages[0].t_prox.eps - (0.9 * 0.02 + 0.1 * 0.01)),
    )
    fixed = float(np.max(np.abs(ema_update(tea, tea, 0.9).to_vector() - tea.to_vector())))

    rng = np.random.default_rng(707)
    img = rng.random((32, 32, 3))
    identity = strong_augment(img, AugmentorConfig().without_strong(), ("x", 1)).tobytes() == img.tobytes()

    worst = 0.0
    cfg = AugmentorConfig(crop_size=24)
    for k, s in enumerate(synthetic_pairs(5, 48)):
        p, j, t = weak_augment(s.lq, s.gt, s.t, cfg=cfg, key=(s.image_id, k))
        worst = max(worst, float(np.max(np.abs(compose_simplified(j, t) - p))))
    ok = err <= 1e-12 and fixed <= 1e-12 and identity and worst <= 1e-12
    assert record_verdict(
        "AC-7", ok, f"ema err={err:.1e} fixed-point err={fixed:.1e} strong identity={identity} weak ASM err={worst:.1e}"
    )


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    write_scene_dir(root / "scenes", 6, seed=0, size=64)
    write_scene_dir(root / "real", 4, seed=0, size=64, real=True)
    cfg = load_config(env={})
    assert cmd_synthesize(cfg, str(root / "scenes"), str(root / "syn")) == 0
    return root


def test_ac8_determinism_and_persistence(desk, tmp_path):
    cfg = load_config(None, ["tuner.budget=12", "rounds=2", "seed=5"], env={})
    for run in ("a", "b"):
        assert cmd_finetune(cfg, str(desk / "real"), str(desk / "syn"), str(tmp_path / run)) == 0
    same_params = (tmp_path / "a" / "params.json").read_bytes() == (tmp_path / "b" / "params.json").read_bytes()
    same_manifest = (tmp_path / "a" / "pool" / "manifest.json").read_bytes() == (
        tmp_path / "b" / "pool" / "manifest.json").read_bytes()
    problems = verify_pool(tmp_path / "a" / "pool")

    rng = np.random.default_rng(808)
    pfm_ok = True
    for shape in [(17, 9), (8, 12, 3)]:
        data = rng.random(shape).astype(np.float32)
        save_pfm(data, tmp_path / "x.pfm")
        pfm_ok &= load_pfm(tmp_path / "x.pfm").astype(np.float32).tobytes() == data.tobytes()
        save_pfm(load_pfm(tmp_path / "x.pfm"), tmp_path / "y.pfm")
        pfm_ok &= (tmp_path / "x.pfm").read_bytes() == (tmp_path / "y.pfm").read_bytes()
    ok = same_params and same_manifest and not problems and pfm_ok
    assert record_verdict(
        "AC-8", ok,
        f"params identical={same_params} manifest identical={same_manifest} verify problems={len(problems)} pfm bitwise={pfm_ok}",
    )


def test_ac9_density_ranking():
    rng = np.random.default_rng(909)
    wins = 0
    for _ in range(50):
        j = make_scene(rng, 64, 64)
        t = np.full((64, 64), rng.uniform(0.1, 0.8))
        wins += density_score(j) > density_score(compose_simplified(j, t))
    ok = wins >= 48
    assert record_verdict("AC-9", ok, f"clear scored higher in {wins}/50 pairs")


def test_ac10_stage_sweep(desk, tmp_path):
    cfg = load_config(None, ["tuner.budget=20", "stage_counts=[1,2,4,6]"], env={})
    rc = cmd_sweep(cfg, str(desk / "syn"), str(tmp_path))
    rows = list(csv.DictReader(open(tmp_path / "sweep.csv")))
    table = json.loads((tmp_path / "sweep.json").read_text())["rows"]
    ks = [int(r["stages"]) for r in rows]
    ok = rc == 0 and ks == [1, 2, 4, 6] and len(table) == 4 and all(r["final_loss"] <= r["init_loss"] for r in table)
    summary = " ".join(f"K={r['stages']}:{r['init_loss']:.3f}->{r['final_loss']:.3f}" for r in table)
    assert record_verdict("AC-10", ok, summary)
