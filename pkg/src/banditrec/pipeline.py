"""End-to-end experiment: simulate data, then compare LOOCV, clipped IPS and
simulated A/B tests over the same set of baseline recommenders."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from scipy.stats import kendalltau

from .abtest import run_ab_suite
from .config import ExperimentConfig
from .counterfactual import cips, clip_sweep, rank_by_ucb
from .env import EnvConfig, create_env, generate_dataset
from .errors import DataFormatError
from .io import read_dataset, read_meta, write_csv, write_dataset
from .organic_eval import run_loocv
from .policies import fit, logging_policy

log = logging.getLogger(__name__)

ESTIMATE_HEADER = ["policy", "estimator", "m", "estimate", "ci_low", "ci_high", "n", "ess", "clip_fraction"]


@dataclass
class PolicyComparison:
    policy: str
    loocv_hr_at_1: float
    loocv_std: float
    cips_estimate: float
    cips_ci_low: float
    cips_ci_high: float
    ab_ctr: float
    ab_ci_low: float
    ab_ci_high: float
    loocv_rank: int
    cips_ucb_rank: int
    ab_rank: int


@dataclass
class ComparisonSummary:
    rows: list
    loocv_order: list
    cips_ucb_order: list
    ab_order: list
    tau_loocv_ab: float
    tau_cips_ab: float

    @property
    def loocv_matches_ab(self) -> bool:
        return self.loocv_order == self.ab_order

    @property
    def cips_ucb_matches_ab(self) -> bool:
        return self.cips_ucb_order == self.ab_order


def make_logger(cfg: ExperimentConfig, num_items: int | None = None):
    return logging_policy(num_items or cfg.env.num_items, cfg.logging_form,
                          cfg.logging_temperature, cfg.logging_epsilon_floor)


def _logger_meta(logger) -> dict:
    return {"logging": {"form": logger.sampling, "temperature": logger.temperature,
                        "epsilon_floor": logger.epsilon_floor}}


def simulate(cfg: ExperimentConfig) -> dict:
    """Generate and write the train and test datasets under ``cfg.out``."""
    env = create_env(cfg.env)
    logger = make_logger(cfg)
    out = {}
    for phase, users in (("train", cfg.train_users), ("test", cfg.test_users)):
        ds = generate_dataset(env, users, logger, phase, threads=cfg.threads)
        write_dataset(ds, Path(cfg.out) / phase, cfg.env, _logger_meta(logger))
        log.info("%s: %d users, %d organic, %d bandit events", phase, users, len(ds.organic), len(ds.bandit))
        out[phase] = ds
    return out


def load_datasets(cfg: ExperimentConfig):
    train = read_dataset(Path(cfg.out) / "train")
    test = read_dataset(Path(cfg.out) / "test")
    if train.num_items != test.num_items:
        raise DataFormatError("train and test datasets disagree on num_items")
    return train, test


def env_from_meta(directory) -> EnvConfig:
    meta = read_meta(directory)
    try:
        return EnvConfig(**meta["env"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"meta.json has no usable 'env' record ({exc})", Path(directory) / "meta.json") from None


def fit_policies(cfg: ExperimentConfig, organic, num_items: int) -> list:
    return [fit(v, organic, num_items, cfg.policy_params(v), name=v) for v in cfg.variants]


def _order(items, key):
    return [name for name, _ in sorted(items, key=key)]


def compare(loocv_reports, cips_reports, ab_reports) -> ComparisonSummary:
    lo = {r.policy: r for r in loocv_reports}
    cp = {r.policy: r for r in cips_reports}
    ab = {r.policy: r for r in ab_reports}
    names = [r.policy for r in ab_reports]
    loocv_order = _order(((n, lo[n]) for n in names), key=lambda t: (-t[1].mean, t[0]))
    ab_order = _order(((n, ab[n]) for n in names), key=lambda t: (-t[1].ctr, t[0]))
    cips_order = rank_by_ucb([cp[n] for n in names])

    def tau(order):
        if len(names) < 2:
            return 1.0
        t = kendalltau([order.index(n) for n in names], [ab_order.index(n) for n in names])[0]
        return float(t)

    rows = [
        PolicyComparison(
            n, lo[n].mean, lo[n].std,
            cp[n].point_estimate, cp[n].ci_low, cp[n].ci_high,
            ab[n].ctr, ab[n].ci_low, ab[n].ci_high,
            loocv_order.index(n) + 1, cips_order.index(n) + 1, ab_order.index(n) + 1,
        )
        for n in names
    ]
    return ComparisonSummary(rows, loocv_order, cips_order, ab_order, tau(loocv_order), tau(cips_order))


def _estimate_row(r):
    return [r.policy, r.estimator, r.clip_m, r.point_estimate, r.ci_low, r.ci_high,
            r.n, r.effective_sample_size, r.clip_fraction]


def evaluate(cfg: ExperimentConfig, out_dir=None) -> ComparisonSummary:
    """Run the three evaluation schemes and write their reports."""
    out_dir = Path(out_dir or cfg.out)
    train, test = load_datasets(cfg)
    env = create_env(env_from_meta(Path(cfg.out) / "test"))
    P = train.num_items
    models = fit_policies(cfg, train.organic, P)

    loocv = run_loocv(train.organic, P, {v: (v, cfg.policy_params(v)) for v in cfg.variants},
                      cfg.loocv_folds, root_seed=cfg.seed)
    write_csv(out_dir / "loocv_report.csv", ["policy", "fold", "hr_at_1"],
              [[r.policy, f, hr] for r in loocv for f, hr in enumerate(r.per_fold)])
    write_csv(out_dir / "loocv_summary.csv", ["policy", "mean", "std", "n_users_evaluated"],
              [[r.policy, r.mean, r.std, r.n_users_evaluated] for r in loocv])

    ccfg = cfg.cips_config()
    estimates = [cips(test.bandit, m, "deterministic", ccfg) for m in models]
    # on-policy sanity check: the logger as a stochastic target reproduces the logged CTR
    logger = make_logger(cfg, P)
    onpolicy = cips(test.bandit, logger, "stochastic", ccfg, estimator="cips-onpolicy")
    write_csv(out_dir / "cips_report.csv", ESTIMATE_HEADER,
              [_estimate_row(r) for r in estimates + [onpolicy]])

    ab = run_ab_suite(env, models, cfg.abtest_users, cfg.seed, cfg.abtest_mode, cfg.threads)
    write_csv(out_dir / "abtest_report.csv", ["policy", "impressions", "clicks", "ctr", "ci_low", "ci_high"],
              [[r.policy, r.impressions, r.clicks, r.ctr, r.ci_low, r.ci_high] for r in ab])

    summary = compare(loocv, estimates, ab)
    write_csv(out_dir / "comparison.csv",
              ["policy", "loocv_hr_at_1", "loocv_std", "cips_estimate", "cips_ci_low", "cips_ci_high",
               "ab_ctr", "ab_ci_low", "ab_ci_high", "loocv_rank", "cips_ucb_rank", "ab_rank"],
              [[r.policy, r.loocv_hr_at_1, r.loocv_std, r.cips_estimate, r.cips_ci_low, r.cips_ci_high,
                r.ab_ctr, r.ab_ci_low, r.ab_ci_high, r.loocv_rank, r.cips_ucb_rank, r.ab_rank]
               for r in summary.rows])
    write_csv(out_dir / "agreement.csv", ["scheme", "kendall_tau_vs_ab", "ranking_matches_ab", "order"],
              [["loocv", summary.tau_loocv_ab, summary.loocv_matches_ab, " > ".join(summary.loocv_order)],
               ["cips_ucb", summary.tau_cips_ab, summary.cips_ucb_matches_ab, " > ".join(summary.cips_ucb_order)],
               ["abtest", 1.0, True, " > ".join(summary.ab_order)]])
    return summary


def sweep_m(cfg: ExperimentConfig, out_dir=None) -> list:
    out_dir = Path(out_dir or cfg.out)
    train, test = load_datasets(cfg)
    models = fit_policies(cfg, train.organic, train.num_items)
    ccfg = cfg.cips_config()
    reports = [r for m in models for r in clip_sweep(test.bandit, m, cfg.m_grid, "deterministic", ccfg)]
    write_csv(out_dir / "clip_sweep.csv", ESTIMATE_HEADER, [_estimate_row(r) for r in reports])
    return reports
