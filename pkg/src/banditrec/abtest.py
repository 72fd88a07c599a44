"""Simulated online A/B tests: deploy a policy on fresh users and count clicks."""
from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .env import map_users, sample_from, simulate_user
from .errors import DomainError

_AB_TAG = 3


@dataclass(frozen=True)
class AbTestReport:
    policy: str
    impressions: int
    clicks: int
    ctr: float
    ci_low: float
    ci_high: float
    # mean ground-truth click probability over the shown (state, action) pairs
    expected_ctr: float = float("nan")


def wilson_interval(clicks: int, impressions: int, level: float = 0.95) -> tuple:
    if impressions <= 0:
        return 0.0, 1.0
    z = NormalDist().inv_cdf(0.5 + level / 2)
    phat = clicks / impressions
    denom = 1 + z * z / impressions
    centre = (phat + z * z / (2 * impressions)) / denom
    half = z * math.sqrt(phat * (1 - phat) / impressions + z * z / (4 * impressions**2)) / denom
    lo, hi = max(0.0, centre - half), min(1.0, centre + half)
    # guard the rounding at phat in {0, 1}
    return min(lo, phat), max(hi, phat)


def _chooser(policy, mode):
    if mode == "deterministic":
        def choose(counts, n, rng):
            return np.full(n, policy.top1(counts), dtype=np.int64), np.ones(n)
    elif mode == "stochastic":
        def choose(counts, n, rng):
            dist = policy.action_distribution(counts)
            actions = sample_from(dist, n, rng)
            return actions, dist[actions]
    else:
        raise DomainError(f"deployment mode must be deterministic or stochastic, got {mode!r}")
    return choose


def run_abtest(env, policy, num_users: int, mode: str = "deterministic",
               seed: int = 0, threads: int = 1, population: tuple | None = None) -> AbTestReport:
    """Deploy ``policy`` on ``num_users`` fresh users and measure its CTR.

    Each user runs the same organic block as in logged data collection; the
    policy then chooses every bandit-step action from the resulting view
    counts. The interval is a 95% Wilson score interval.
    """
    if num_users < 1:
        raise DomainError("num_users must be at least 1")
    choose = _chooser(policy, mode)
    if population is None:
        population = (_AB_TAG, int(seed))
    results = map_users(lambda u: simulate_user(env, population, u, choose), range(num_users), threads)
    clicks = sum(int(r[4].sum()) for r in results)
    impressions = sum(len(r[4]) for r in results)
    expected = math.fsum(p for r in results for p in r[5].tolist())
    ctr = clicks / impressions if impressions else 0.0
    lo, hi = wilson_interval(clicks, impressions)
    return AbTestReport(policy.name, impressions, clicks, ctr, lo, hi,
                        expected / impressions if impressions else float("nan"))


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.blake2b(name.encode(), digest_size=4).digest(), "little")


def run_ab_suite(env, policies, num_users: int, seed: int = 0,
                 mode: str = "deterministic", threads: int = 1) -> list:
    """One independent A/B arm per policy, reports in input order.

    Each arm's user population is keyed by ``(seed, policy name, k)`` where
    ``k`` counts earlier arms with the same name, so reordering the policies
    leaves every report unchanged.
    """
    seen = Counter()
    reports = []
    for policy in policies:
        k = seen[policy.name]
        seen[policy.name] += 1
        population = (_AB_TAG, int(seed), _name_key(policy.name), k)
        reports.append(run_abtest(env, policy, num_users, mode, seed, threads, population))
    return reports
