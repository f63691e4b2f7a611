"""Acceptance criteria 1-8, each at its stated tolerance and runtime budget.

Every test records one PASS/FAIL line, printed in the pytest terminal summary.
The benchmark runs behind criteria 4-6 are shared through a module fixture.
"""

import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from metagin.cli import main as cli_main
from metagin.harness.experiment import ExperimentConfig, run_ablation, run_noise_sweep
from metagin.meta import inner_adapt, meta_gradient
from metagin.model import episode_loss, forward_group, group_representations
from metagin.noise import apply_noise, build_corruption_matrix, empirical_flip_rates
from metagin.numerics import ParamSet, gradient

from oracles import central_difference, fd_param_gradient

MASTER_SEEDS = range(5)
# minimum seed-averaged margins; derived from oracle runs of the same benchmark
MIN_FULL_OVER_NAIVE = 0.0
MIN_GAP_GROWTH = 0.0

_START = time.perf_counter()
_SPENT: dict[int, float] = {}


def _rel_err(analytic, numeric, floor=1e-8):
    analytic, numeric = np.ravel(analytic), np.ravel(numeric)
    big = np.maximum(np.abs(analytic), np.abs(numeric)) > floor
    if not big.any():
        return 0.0
    return float((np.abs(analytic - numeric)[big] / np.maximum(np.abs(analytic), np.abs(numeric))[big]).max())


def test_criterion_1_gradient_exactness(graph, propagated, tiny_episode, tiny_params, acceptance_log):
    t0 = time.perf_counter()
    loss = lambda p: episode_loss(tiny_episode, propagated, p, "support", "full")  # noqa: E731
    query = lambda p: episode_loss(tiny_episode, propagated, p, "query", "full")  # noqa: E731
    err_loss = _rel_err(gradient(loss, tiny_params).flatten(), fd_param_gradient(loss, tiny_params))

    def objective(vec):
        adapted = inner_adapt(tiny_params.unflatten(vec), tiny_episode, propagated, lr=0.1)
        return float(query(adapted))

    g, _ = meta_gradient(tiny_params, loss, query, 0.1, 1, "exact")
    err_meta = _rel_err(g.flatten(), central_difference(objective, tiny_params.flatten(), h=1e-5))
    elapsed = time.perf_counter() - t0
    _SPENT[1] = elapsed
    ok = err_loss < 1e-4 and err_meta < 1e-4 and elapsed < 30
    acceptance_log(1, ok, f"loss grad rel err {err_loss:.2e}, meta-grad rel err {err_meta:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_2_noise_statistics(acceptance_log):
    t0 = time.perf_counter()
    labels = np.repeat(np.arange(5), 10_000)
    sym = empirical_flip_rates(
        labels, apply_noise(labels, range(5), build_corruption_matrix("sym", 5, 0.3), seed=0).corrupted_labels, range(5)
    ).matrix
    flip = 1 - np.diag(sym)
    off = sym[~np.eye(5, dtype=bool)]
    sym_ok = np.all(np.abs(flip - 0.3) <= 0.02) and np.all(np.abs(off - 0.075) <= 0.01)

    asym = empirical_flip_rates(
        labels, apply_noise(labels, range(5), build_corruption_matrix("asym", 5, 0.3), seed=0).corrupted_labels, range(5)
    ).matrix
    asym_ok = True
    for i in range(5):
        row = np.delete(asym[i], i)
        above = row[row > 0.01]
        asym_ok &= above.size == 1 and abs(above[0] - 0.3) <= 0.02
    elapsed = time.perf_counter() - t0
    _SPENT[2] = elapsed
    ok = bool(sym_ok and asym_ok and elapsed < 5)
    acceptance_log(
        2, ok,
        f"sym flip {flip.min():.4f}..{flip.max():.4f}, off-class {off.min():.4f}..{off.max():.4f}; "
        f"asym single partner {bool(asym_ok)}, {elapsed:.2f}s",
    )
    assert ok


def test_criterion_3_interpolation_invariants(acceptance_log):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = {"attention": 0.0, "weights": 0.0, "permutation": 0.0, "naive": 0.0}
    scores_ok = singleton_exact = True
    for i in range(1000):
        m = (1, 2, 3, 5, 8)[i % 5]
        dh = int(rng.integers(1, 9))
        z = torch.as_tensor(rng.standard_normal((m, dh)) * rng.uniform(0.1, 5.0))
        params = ParamSet.init(4, dh, 3, seed=rng)
        fwd = forward_group(z, params)
        worst["attention"] = max(worst["attention"], float((fwd.attention.sum(-1) - 1).abs().max()))
        scores_ok &= bool(torch.all((fwd.scores > 0) & (fwd.scores < 1)))
        w = fwd.scores / fwd.scores.sum()
        scores_ok &= bool(torch.all(w >= 0))
        worst["weights"] = max(worst["weights"], abs(float(w.sum()) - 1))
        perm = rng.permutation(m)
        worst["permutation"] = max(
            worst["permutation"], float((forward_group(z[perm], params).representation - fwd.representation).abs().max())
        )
        if m == 1:
            singleton_exact &= bool(torch.equal(fwd.representation, z[0]))
            full = group_representations(z[None], params, "full")
            naive = group_representations(z[None], params, "naive")
            worst["naive"] = max(worst["naive"], float((full - naive).abs().max()))
    elapsed = time.perf_counter() - t0
    _SPENT[3] = elapsed
    ok = all(v <= 1e-12 for v in worst.values()) and scores_ok and singleton_exact and elapsed < 10
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    acceptance_log(3, ok, f"{detail}; scores in (0,1) {scores_ok}; M=1 exact {singleton_exact}; {elapsed:.1f}s")
    assert ok


def _benchmark_config(seed: int) -> ExperimentConfig:
    # desk-scale benchmark: library defaults with one repetition per master seed
    return ExperimentConfig(epsilon=0.3, noise_kind="symmetric", n_repetitions=1, master_seed=seed)


@pytest.fixture(scope="module")
def benchmark():
    """Seed-wise accuracies and wall times keyed by (variant, epsilon)."""
    acc, wall = {}, {}
    for seed in MASTER_SEEDS:
        cfg = _benchmark_config(seed)
        records = run_ablation(cfg)
        for r in records:
            acc.setdefault((r.config["variant"], 0.3), []).append(r.mean)
            wall.setdefault((r.config["variant"], 0.3), []).append(r.wall_s)
        for variant, m in (("full", cfg.group_size), ("naive", 1)):
            for r in run_noise_sweep(cfg.replace(variant=variant, group_size=m), [0.0, 0.5]):
                acc.setdefault((variant, r.config["epsilon"]), []).append(r.mean)
                wall.setdefault((variant, r.config["epsilon"]), []).append(r.wall_s)
    return {k: np.asarray(v) for k, v in acc.items()}, {k: np.asarray(v) for k, v in wall.items()}


def test_criterion_4_denoising_benefit(benchmark, acceptance_log):
    acc, wall = benchmark
    full, naive = acc[("full", 0.3)].mean(), acc[("naive", 0.3)].mean()
    per_seed = wall[("full", 0.3)] + wall[("naive", 0.3)]
    _SPENT[4] = float(per_seed.sum())
    ok = full - naive > MIN_FULL_OVER_NAIVE and full > 0.5 and naive > 0.5 and per_seed.max() < 300
    acceptance_log(
        4, ok,
        f"full {full:.4f} vs naive {naive:.4f} (margin {full - naive:+.4f}, need > {MIN_FULL_OVER_NAIVE}), "
        f"slowest seed {per_seed.max():.0f}s",
    )
    assert ok


def test_criterion_5_ablation_ordering(benchmark, acceptance_log):
    acc, wall = benchmark
    means = {v: acc[(v, 0.3)].mean() for v in ("full", "mlp", "mean", "naive")}
    pooled = float(np.sqrt(np.mean([acc[(v, 0.3)].var() for v in ("full", "mlp", "mean")])))
    lo, hi = min(means["mean"], means["full"]), max(means["mean"], means["full"])
    ordered = means["full"] >= means["mean"] >= means["naive"]
    mlp_ok = lo - pooled <= means["mlp"] <= hi + pooled
    _SPENT[5] = float(wall[("mlp", 0.3)].sum() + wall[("mean", 0.3)].sum())
    ok = ordered and mlp_ok
    acceptance_log(
        5, ok,
        "full {full:.4f}, mlp {mlp:.4f}, mean {mean:.4f}, naive {naive:.4f}; ".format(**means)
        + f"full>=mean>=naive {ordered}, mlp within pooled std {pooled:.4f}: {mlp_ok}",
    )
    assert ok


def test_criterion_6_noise_trend(benchmark, acceptance_log):
    acc, wall = benchmark
    gap = {e: acc[("full", e)].mean() - acc[("naive", e)].mean() for e in (0.0, 0.3, 0.5)}
    sweep_time = float(sum(w.sum() for (v, e), w in wall.items() if v in ("full", "naive")))
    _SPENT[6] = sweep_time - float(wall[("full", 0.3)].sum() + wall[("naive", 0.3)].sum())
    ok = gap[0.5] - gap[0.0] >= MIN_GAP_GROWTH and sweep_time < 900
    acceptance_log(
        6, ok,
        f"gap eps=0 {gap[0.0]:+.4f}, eps=0.3 {gap[0.3]:+.4f}, eps=0.5 {gap[0.5]:+.4f}; sweep {sweep_time:.0f}s",
    )
    assert ok


def test_criterion_7_determinism(tmp_path, acceptance_log):
    t0 = time.perf_counter()
    cfg = {"n_repetitions": 1, "n_test_tasks": 20, "meta": {"max_episodes": 200}}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    codes = [cli_main(["run", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / d)]) for d in "ab"]
    same = all(
        (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in ("results.csv", "params.json")
    )
    elapsed = time.perf_counter() - t0
    _SPENT[7] = elapsed
    ok = codes == [0, 0] and same and elapsed / 2 < 120
    acceptance_log(7, ok, f"results.csv and params.json byte-identical {same}; {elapsed / 2:.1f}s per run")
    assert ok


def test_criterion_8_suite(acceptance_log):
    tests_dir = Path(__file__).parent
    others = sorted(str(p) for p in tests_dir.glob("test_*.py") if p.name != Path(__file__).name)
    t0 = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *others],
        capture_output=True, text=True, cwd=tests_dir.parent,
    )
    unit_time = time.perf_counter() - t0
    acceptance_time = time.perf_counter() - _START
    # the unit run above is part of the acceptance time already
    total = acceptance_time
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0 and total < 600
    acceptance_log(8, ok, f"unit/property suite: {summary} ({unit_time:.0f}s); suite total {total:.0f}s")
    assert ok, proc.stdout[-3000:]
