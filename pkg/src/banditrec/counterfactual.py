"""Off-policy CTR estimation from logged bandit feedback.

The clipped IPS estimate of a target policy ``pi`` on logs
``(x_i, a_i, p_i, click_i)`` is::

    (1/n) * sum_i click_i * min(M, pi(a_i | x_i) / p_i)

``M = inf`` gives plain IPS. Confidence intervals come from a seeded
percentile bootstrap. By default whole users are resampled: all logs of one
user share a context and a latent state, so they are not independent draws.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DomainError, EstimationError

DEFAULT_CLIP_M = 15.0


@dataclass(frozen=True)
class CipsConfig:
    clip_m: float = DEFAULT_CLIP_M
    bootstrap_samples: int = 1000
    ci_level: float = 0.95
    seed: int = 0
    resample: str = "users"

    def __post_init__(self):
        if not self.clip_m > 0:
            raise DomainError("clip_m must be positive (or inf)")
        if self.bootstrap_samples < 1:
            raise DomainError("bootstrap_samples must be positive")
        if not 0 < self.ci_level < 1:
            raise DomainError("ci_level must lie in (0, 1)")
        if self.resample not in ("users", "logs"):
            raise DomainError("resample must be 'users' or 'logs'")

    def with_clip(self, clip_m: float) -> "CipsConfig":
        return replace(self, clip_m=clip_m)


@dataclass(frozen=True)
class EstimateReport:
    policy: str
    estimator: str
    clip_m: float
    point_estimate: float
    ci_low: float
    ci_high: float
    n: int
    effective_sample_size: float
    clip_fraction: float


def target_probabilities(logs, target, mode: str = "deterministic") -> np.ndarray:
    """``pi(a_i | x_i)`` for every log.

    In deterministic mode the target is the one-hot distribution on
    ``target.rank(x, 1)``, so probabilities are exactly 0 or 1.
    """
    if mode not in ("deterministic", "stochastic"):
        raise DomainError(f"target mode must be deterministic or stochastic, got {mode!r}")
    rows = np.unique(logs.context_row)
    probs = np.zeros(len(logs))
    for r in rows.tolist():
        sel = logs.context_row == r
        ctx = logs.contexts[r]
        if mode == "deterministic":
            probs[sel] = (logs.action[sel] == target.top1(ctx)).astype(np.float64)
        else:
            probs[sel] = target.action_distribution(ctx)[logs.action[sel]]
    return probs


def _check_logs(logs):
    if len(logs) == 0:
        raise EstimationError("cannot estimate from an empty log")
    p = logs.propensity
    bad = ~((p > 0) & (p < 1))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise EstimationError(
            f"propensity {p[i]!r} of log {i} outside (0, 1): the logging policy "
            "must be stochastic with full support")


def clipped_weights(target_probs, propensities, clip_m) -> tuple:
    """Return ``(weights, clipped_mask)``."""
    raw = np.asarray(target_probs, dtype=np.float64) / np.asarray(propensities, dtype=np.float64)
    clipped = raw > clip_m
    return np.minimum(raw, clip_m), clipped


def _estimate(contrib: np.ndarray) -> float:
    # fsum is exactly rounded, hence independent of summation order
    return math.fsum(contrib.tolist()) / len(contrib)


def _percentile_interval(contrib, level, rng, n_boot, groups=None):
    """Percentile interval of the mean of ``contrib`` under resampling.

    With ``groups`` (one label per log) whole groups are drawn with
    replacement and the statistic is the ratio of resampled contribution
    sums to resampled log counts.
    """
    n = len(contrib)
    if not np.any(contrib) or np.all(contrib == contrib[0]):
        v = float(contrib[0])
        return v, v
    if groups is None:
        sums, sizes = contrib, None
    else:
        _, inv = np.unique(groups, return_inverse=True)
        sums = np.bincount(inv, weights=contrib)
        sizes = np.bincount(inv).astype(np.float64)
    m = len(sums)
    stats = np.empty(n_boot)
    chunk = max(1, (1 << 22) // m)  # bounds the index block at ~32 MB
    done = 0
    while done < n_boot:
        b = min(chunk, n_boot - done)
        idx = rng.integers(0, m, size=(b, m))
        denom = n if sizes is None else sizes[idx].sum(axis=1)
        stats[done:done + b] = sums[idx].sum(axis=1) / denom
        done += b
    alpha = 1.0 - level
    lo, hi = np.quantile(stats, [alpha / 2, 1 - alpha / 2])
    return float(lo), float(hi)


def _interval(logs, contrib, config):
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    groups = logs.user_id if config.resample == "users" else None
    return _percentile_interval(contrib, config.ci_level, rng, config.bootstrap_samples, groups)


def bootstrap_ci(logs, target, config: CipsConfig, mode: str = "deterministic",
                 target_probs=None) -> tuple:
    """Percentile bootstrap interval for the clipped IPS estimate."""
    _check_logs(logs)
    if target_probs is None:
        target_probs = target_probabilities(logs, target, mode)
    w, _ = clipped_weights(target_probs, logs.propensity, config.clip_m)
    return _interval(logs, logs.click * w, config)


def cips(logs, target, mode: str = "deterministic", config: CipsConfig | None = None,
         target_probs=None, estimator: str | None = None) -> EstimateReport:
    config = config or CipsConfig()
    _check_logs(logs)
    if target_probs is None:
        target_probs = target_probabilities(logs, target, mode)
    w, clipped = clipped_weights(target_probs, logs.propensity, config.clip_m)
    contrib = logs.click * w
    point = _estimate(contrib)
    lo, hi = _interval(logs, contrib, config)
    # the percentile interval of a skewed statistic may miss the point itself
    lo, hi = min(lo, point), max(hi, point)

    sw = math.fsum(w.tolist())
    sw2 = math.fsum((w * w).tolist())
    ess = sw * sw / sw2 if sw2 > 0 else 0.0
    if estimator is None:
        estimator = "ips" if math.isinf(config.clip_m) else "cips"
    return EstimateReport(
        policy=target.name,
        estimator=estimator,
        clip_m=float(config.clip_m),
        point_estimate=point,
        ci_low=lo,
        ci_high=hi,
        n=len(logs),
        effective_sample_size=ess,
        clip_fraction=float(clipped.mean()),
    )


def ips(logs, target, mode: str = "deterministic", config: CipsConfig | None = None,
        target_probs=None) -> EstimateReport:
    config = config or CipsConfig()
    return cips(logs, target, mode, config.with_clip(math.inf), target_probs=target_probs)


def rank_by_ucb(reports) -> list:
    """Policy names by descending upper bound, then point estimate, then name."""
    ordered = sorted(reports, key=lambda r: (-r.ci_high, -r.point_estimate, r.policy))
    return [r.policy for r in ordered]


def clip_sweep(logs, target, m_grid, mode: str = "deterministic",
               config: CipsConfig | None = None) -> list:
    grid = [float(m) for m in m_grid]
    if any(m <= 0 for m in grid) or grid != sorted(grid):
        raise DomainError("m_grid must be positive and ascending")
    config = config or CipsConfig()
    probs = target_probabilities(logs, target, mode)
    return [
        cips(logs, target, mode, config.with_clip(m), target_probs=probs)
        for m in grid
    ]
