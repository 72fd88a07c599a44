"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Desk-scale criteria run the bundled ``desk`` preset through the CLI for the
seed set fixed below. The full-scale dataset check is marked ``slow``.
"""
import filecmp
import math
import time

import numpy as np
import pytest

from banditrec.cli import main
from banditrec.config import load_config
from banditrec.counterfactual import CipsConfig, clip_sweep, cips, ips, rank_by_ucb
from banditrec.env import (
    EnvConfig,
    Environment,
    UserState,
    click_probability,
    create_env,
    generate_dataset,
    sample_from,
)
from banditrec.io import read_csv
from banditrec.organic_eval import run_loocv
from banditrec.pipeline import fit_policies, load_datasets, make_logger
from banditrec.policies import VARIANTS, PersonalizedPopularityPolicy, logging_policy

DESK_SEEDS = (0, 1, 2, 3, 4)
UCB_POLICIES = ("personalized_popularity", "popularity", "random")


def verdict(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    """``simulate`` + ``eval`` on the desk preset for every seed."""
    runs = {}
    start = time.perf_counter()
    for seed in DESK_SEEDS:
        out = tmp_path_factory.mktemp(f"desk{seed}")
        args = ["--config", "desk", "--seed", str(seed), "--out", str(out), "--threads", "1"]
        assert main(["simulate", *args]) == 0
        assert main(["eval", *args]) == 0
        runs[seed] = out
    runs["elapsed"] = time.perf_counter() - start
    return runs


def _rows(path):
    return {r.get("policy", r.get("scheme")): r for r in read_csv(path)}


# 1 -------------------------------------------------------------------------------

def test_on_policy_identity(desk_runs, capsys):
    cfg = load_config("desk", seed=0).with_overrides(out=desk_runs[0])
    _, test = load_datasets(cfg)
    logger = make_logger(cfg, test.num_items)
    start = time.perf_counter()
    ctr = test.bandit.empirical_ctr()
    worst = max(
        abs(cips(test.bandit, logger, "stochastic", CipsConfig(m, 100)).point_estimate - ctr)
        for m in (1.0, 15.0, math.inf)
    )
    elapsed = time.perf_counter() - start
    verdict(capsys, 1, worst <= 1e-12 and elapsed < 1.0,
            f"max |CIPS - empirical CTR| = {worst:.2e} over M in (1, 15, inf), {elapsed:.2f}s")


# 2 -------------------------------------------------------------------------------

def test_small_instance_unbiasedness(capsys):
    start = time.perf_counter()
    cfg = EnvConfig(num_items=3, latent_dim=2, user_drift_sigma=0.0, click_scale=1.0, click_offset=-1.0)
    env = Environment.from_embeddings(cfg, [[1.0, 0.0], [0.0, 1.0], [-1.0, -0.5]])
    user = UserState(0, np.array([0.8, 0.4]))
    ctr = np.array([click_probability(env, user, a) for a in range(3)])
    context = np.array([4, 1, 0])
    pi0 = logging_policy(3).action_distribution(context)
    target = PersonalizedPopularityPolicy(3, temperature=2.0, name="target")
    pi = target.action_distribution(context)
    truth = float(pi @ ctr)

    from banditrec.env import BanditLogs

    rng = np.random.default_rng(20240)
    n, reps = 1000, 10_000
    cfg_ips = CipsConfig(math.inf, bootstrap_samples=1)
    estimates = np.empty(reps)
    for r in range(reps):
        actions = sample_from(pi0, n, rng)
        clicks = (rng.random(n) < ctr[actions]).astype(np.int64)
        logs = BanditLogs(np.zeros(n, dtype=np.int64), np.arange(n), actions, pi0[actions], clicks,
                          np.zeros(n, dtype=np.int64), context[None, :])
        estimates[r] = ips(logs, target, "stochastic", cfg_ips).point_estimate
    se = estimates.std(ddof=1) / math.sqrt(reps)
    gap = abs(estimates.mean() - truth)
    elapsed = time.perf_counter() - start
    verdict(capsys, 2, gap < 3 * se and elapsed < 60,
            f"mean {estimates.mean():.5f} vs truth {truth:.5f}, gap {gap / se:.2f} SE, {elapsed:.1f}s")


# 3 -------------------------------------------------------------------------------

def test_clipping_monotonicity(desk_runs, capsys):
    cfg = load_config("desk", seed=0).with_overrides(out=desk_runs[0])
    train, test = load_datasets(cfg)
    start = time.perf_counter()
    problems = []
    for model in fit_policies(cfg, train.organic, train.num_items):
        reps = clip_sweep(test.bandit, model, cfg.m_grid, "deterministic", CipsConfig(bootstrap_samples=100))
        est = [r.point_estimate for r in reps]
        if est != sorted(est):
            problems.append(f"{model.name} not monotone {est}")
        problems += [f"{model.name} M={r.clip_m}" for r in reps if not 0 <= r.point_estimate <= r.clip_m]
    elapsed = time.perf_counter() - start
    verdict(capsys, 3, not problems and elapsed < 10,
            f"6 policies x M in {list(cfg.m_grid)}, {elapsed:.2f}s" + (f"; {problems}" if problems else ""))


# 4 -------------------------------------------------------------------------------

def test_ucb_ranking_matches_abtest(desk_runs, capsys):
    matches, coverage_ok, lines = 0, 0, []
    for seed in DESK_SEEDS:
        rows = _rows(desk_runs[seed] / "comparison.csv")
        sel = {p: rows[p] for p in UCB_POLICIES}
        ucb = sorted(UCB_POLICIES, key=lambda p: (-float(sel[p]["cips_ci_high"]),
                                                  -float(sel[p]["cips_estimate"]), p))
        ab = sorted(UCB_POLICIES, key=lambda p: (-float(sel[p]["ab_ctr"]), p))
        covered = sum(float(r["cips_ci_low"]) <= float(r["ab_ctr"]) <= float(r["cips_ci_high"])
                      for r in sel.values())
        matches += ucb == ab
        coverage_ok += covered >= 2
        lines.append(f"seed {seed}: rank {'ok' if ucb == ab else 'differs'}, covered {covered}/3")
    elapsed = desk_runs["elapsed"]
    verdict(capsys, 4, matches >= 4 and coverage_ok == len(DESK_SEEDS) and elapsed < 300,
            f"rank match {matches}/5, coverage>=2 in {coverage_ok}/5, desk runs {elapsed:.0f}s; "
            + "; ".join(lines))


# 5 -------------------------------------------------------------------------------

def test_loocv_ranking_diverges(desk_runs, capsys):
    taus = []
    for seed in DESK_SEEDS:
        agree = _rows(desk_runs[seed] / "agreement.csv")
        taus.append(float(agree["loocv"]["kendall_tau_vs_ab"]))
    diverging = sum(t < 1 for t in taus)
    verdict(capsys, 5, diverging >= 4, f"Kendall tau LOOCV vs A/B per seed {[round(t, 3) for t in taus]}")


# 6 -------------------------------------------------------------------------------

def test_random_policy_effective_sample_size(desk_runs, capsys):
    fractions = []
    for seed in DESK_SEEDS:
        row = [r for r in read_csv(desk_runs[seed] / "cips_report.csv")
               if r["policy"] == "random" and r["estimator"] == "cips"][0]
        fractions.append(float(row["ess"]) / int(row["n"]))
    verdict(capsys, 6, all(f < 0.05 for f in fractions),
            f"random ESS/n per seed {[round(f, 4) for f in fractions]}")


# 7 -------------------------------------------------------------------------------

def test_loocv_sanity(desk_runs, capsys):
    start = time.perf_counter()
    cfg = load_config("desk", seed=0).with_overrides(out=desk_runs[0])
    train, _ = load_datasets(cfg)
    P = train.num_items
    rep = run_loocv(train.organic, P, {"random": ("random", None)}, cfg.loocv_folds, cfg.seed)[0]
    se = math.sqrt((1 / P) * (1 - 1 / P) / rep.n_users_evaluated)
    z = abs(rep.mean - 1 / P) / se

    from banditrec.env import OrganicLog

    degenerate = OrganicLog.from_events([(u, s, 7) for u in range(50) for s in range(4)])
    pop = run_loocv(degenerate, P, {"popularity": ("popularity", None)}, cfg.loocv_folds)[0]
    elapsed = time.perf_counter() - start
    verdict(capsys, 7, z < 3 and pop.mean == 1.0 and elapsed < 30,
            f"random HR@1 {rep.mean:.4f} vs 1/P {1 / P:.4f} ({z:.2f} SE); "
            f"degenerate popularity HR@1 {pop.mean}; {elapsed:.1f}s")


# 8 -------------------------------------------------------------------------------

def test_thread_count_does_not_change_outputs(desk_runs, tmp_path, capsys):
    out = tmp_path / "threads8"
    args = ["--config", "desk", "--seed", "0", "--out", str(out), "--threads", "8"]
    assert main(["simulate", *args]) == 0
    assert main(["eval", *args]) == 0
    names = sorted(p.relative_to(desk_runs[0]) for p in desk_runs[0].rglob("*") if p.is_file())
    same = [filecmp.cmp(desk_runs[0] / n, out / n, shallow=False) for n in names]
    csvs = [n for n in names if n.suffix == ".csv"]
    verdict(capsys, 8, all(same) and len(csvs) >= 6,
            f"{sum(same)}/{len(names)} output files byte-identical (1 vs 8 threads), {len(csvs)} CSVs")


# 9 -------------------------------------------------------------------------------

@pytest.mark.slow
def test_full_scale_counts(capsys):
    cfg = load_config("full")
    env = create_env(cfg.env)
    logger = make_logger(cfg)
    counts = {}
    for phase, users in (("train", cfg.train_users), ("test", cfg.test_users)):
        ds = generate_dataset(env, users, logger, phase)
        counts[phase] = (len(ds.organic), len(ds.bandit))
    targets = {"train": (40_000, 160_000), "test": (100_000, 390_000)}
    ok = all(abs(counts[p][i] / targets[p][i] - 1) < 0.05 for p in targets for i in (0, 1))
    verdict(capsys, 9, ok, f"organic/bandit counts {counts} vs {targets}")
