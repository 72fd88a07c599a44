"""Stochastic recommendation environment producing organic and bandit feedback.

Users carry a latent interest vector that follows a Gaussian random walk.
Items carry fixed latent embeddings. Organic views are drawn from a softmax
over user/item affinities; a recommended item is clicked with probability
``sigmoid(click_scale * affinity + click_offset)``.

Every user owns an independent RNG substream derived from
``(env seed, population tag, user id)`` so that generation is order
independent and can be spread over threads without changing a single bit.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import expit as _sigmoid

from .errors import ConfigError, DomainError, SupportError

# Population tags keep train users, test users and A/B test users disjoint.
PHASES = {"train": 1, "test": 2}
_CALIBRATION_TAG = 7

# Offset produced by ``calibrate_click_offset`` for the default P=2000, K=16,
# click_scale=3.0 and a 1% target (seed 0, 200 000 draws).
DEFAULT_CLICK_SCALE = 3.0
DEFAULT_CLICK_OFFSET = -29.279


@dataclass(frozen=True)
class EnvConfig:
    num_items: int = 2000
    latent_dim: int = 16
    user_drift_sigma: float = 0.05
    click_scale: float = DEFAULT_CLICK_SCALE
    click_offset: float = DEFAULT_CLICK_OFFSET
    organic_events_mean: float = 20.0
    bandit_events_mean: float = 80.0
    seed: int = 0

    def __post_init__(self):
        if int(self.num_items) != self.num_items or self.num_items < 2:
            raise ConfigError(f"num_items must be an integer >= 2, got {self.num_items}")
        if int(self.latent_dim) != self.latent_dim or self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be an integer >= 1, got {self.latent_dim}")
        if not self.user_drift_sigma >= 0:
            raise ConfigError("user_drift_sigma must be non-negative")
        if not (self.organic_events_mean > 0 and self.bandit_events_mean > 0):
            raise ConfigError("organic_events_mean and bandit_events_mean must be positive")
        if not (math.isfinite(self.click_scale) and math.isfinite(self.click_offset)):
            raise ConfigError("click_scale and click_offset must be finite")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class UserState:
    user_id: int
    omega: np.ndarray
    step: int = 0


class Environment:
    """Immutable environment: a config plus the item catalog it generated."""

    def __init__(self, config: EnvConfig):
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence(config.seed))
        embeddings = rng.standard_normal((config.num_items, config.latent_dim))
        embeddings.setflags(write=False)
        self.embeddings = embeddings

    @classmethod
    def from_embeddings(cls, config: EnvConfig, embeddings) -> "Environment":
        """Environment with a hand-made catalog (toy and oracle setups)."""
        emb = np.array(embeddings, dtype=np.float64)
        if emb.shape != (config.num_items, config.latent_dim):
            raise ConfigError(f"embeddings must have shape ({config.num_items}, {config.latent_dim})")
        emb.setflags(write=False)
        env = object.__new__(cls)
        env.config = config
        env.embeddings = emb
        return env

    @property
    def num_items(self) -> int:
        return self.config.num_items

    def __repr__(self):
        return f"Environment({self.config!r})"


def create_env(config: EnvConfig) -> Environment:
    return Environment(config)


def user_rng(env: Environment, population: tuple, user_id: int) -> np.random.Generator:
    """Generator for one user of one population; independent of every other."""
    key = tuple(int(k) for k in population) + (int(user_id),)
    return np.random.default_rng(np.random.SeedSequence(env.config.seed, spawn_key=key))


def spawn_user(env: Environment, user_id: int, population: tuple = (0,)) -> UserState:
    return _spawn(env, population, user_id)[0]


def _spawn(env, population, user_id):
    rng = user_rng(env, population, user_id)
    omega = rng.standard_normal(env.config.latent_dim)
    return UserState(int(user_id), omega, 0), rng


def drift(env: Environment, state: UserState, rng: np.random.Generator) -> UserState:
    sigma = env.config.user_drift_sigma
    eps = rng.standard_normal(env.config.latent_dim)
    return UserState(state.user_id, state.omega + sigma * eps, state.step + 1)


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = np.exp(scores - scores.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def organic_distribution(env: Environment, state: UserState) -> np.ndarray:
    return _softmax(env.embeddings @ state.omega)


def click_probability(env: Environment, state: UserState, action: int) -> float:
    if not 0 <= action < env.num_items:
        raise DomainError(f"action {action} outside [0, {env.num_items})")
    affinity = float(env.embeddings[action] @ state.omega)
    cfg = env.config
    return float(_sigmoid(cfg.click_scale * affinity + cfg.click_offset))


def calibrate_click_offset(
    config: EnvConfig,
    target_ctr: float = 0.01,
    num_samples: int = 10_000,
    tol: float = 1e-10,
    bracket: tuple = (-60.0, 60.0),
) -> float:
    """Bisect ``click_offset`` so the mean click probability of a random user
    shown a uniformly random item equals ``target_ctr``.

    The Monte-Carlo draws are fixed before bisecting, so the mean is
    monotone in the offset and the result is deterministic in ``config.seed``.
    """
    if not 0 < target_ctr < 1:
        raise ConfigError("target_ctr must lie in (0, 1)")
    env = create_env(config)
    rng = user_rng(env, (_CALIBRATION_TAG,), 0)
    omegas = rng.standard_normal((num_samples, config.latent_dim))
    actions = rng.integers(0, config.num_items, num_samples)
    affinity = np.einsum("ij,ij->i", env.embeddings[actions], omegas)
    logits = config.click_scale * affinity

    lo, hi = bracket
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _sigmoid(logits + mid).mean() < target_ctr:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------
# Datasets


@dataclass
class OrganicLog:
    """Columnar organic events, sorted by (user_id, seq_index)."""

    user_id: np.ndarray
    seq_index: np.ndarray
    item_id: np.ndarray

    def __len__(self):
        return len(self.item_id)

    @classmethod
    def empty(cls):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), z.copy())

    @classmethod
    def from_events(cls, events):
        """Build from an iterable of ``(user_id, seq_index, item_id)``."""
        arr = np.asarray(list(events), dtype=np.int64).reshape(-1, 3)
        return cls(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy())

    def events(self):
        for u, s, i in zip(self.user_id.tolist(), self.seq_index.tolist(), self.item_id.tolist()):
            yield OrganicEvent(u, s, i)

    def subset(self, mask) -> "OrganicLog":
        return OrganicLog(self.user_id[mask], self.seq_index[mask], self.item_id[mask])

    def users(self) -> np.ndarray:
        return np.unique(self.user_id)

    def count_matrix(self, num_items: int, users=None) -> tuple:
        """Return ``(user_ids, counts)`` with one count row per user."""
        if users is None:
            users = self.users()
        users = np.asarray(users, dtype=np.int64)
        rows = np.searchsorted(users, self.user_id)
        ok = (rows < len(users)) & (users[np.minimum(rows, len(users) - 1)] == self.user_id) if len(users) else np.zeros(len(self), bool)
        counts = np.zeros((len(users), num_items), dtype=np.int64)
        np.add.at(counts, (rows[ok], self.item_id[ok]), 1)
        return users, counts


@dataclass(frozen=True)
class OrganicEvent:
    user_id: int
    seq_index: int
    item_id: int


@dataclass(frozen=True)
class BanditLog:
    user_id: int
    seq_index: int
    context_views: np.ndarray
    action: int
    propensity: float
    click: int


@dataclass
class BanditLogs:
    """Columnar bandit feedback.

    Contexts are stored once per distinct context row; ``context_row[i]``
    points log ``i`` at its row of ``contexts``.
    """

    user_id: np.ndarray
    seq_index: np.ndarray
    action: np.ndarray
    propensity: np.ndarray
    click: np.ndarray
    context_row: np.ndarray
    contexts: np.ndarray
    # Ground-truth click probabilities; only present for freshly simulated data.
    click_prob: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self):
        return len(self.action)

    @property
    def num_items(self) -> int:
        return self.contexts.shape[1]

    @classmethod
    def empty(cls, num_items: int):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), z.copy(), np.zeros(0), z.copy(), z.copy(),
                   np.zeros((0, num_items), dtype=np.int64), np.zeros(0))

    @classmethod
    def from_records(cls, logs, num_items: int):
        """Build from :class:`BanditLog` records, deduplicating contexts."""
        logs = list(logs)
        if not logs:
            return cls.empty(num_items)
        rows, index = [], {}
        context_row = np.empty(len(logs), dtype=np.int64)
        for i, log in enumerate(logs):
            ctx = np.asarray(log.context_views, dtype=np.int64)
            if ctx.shape != (num_items,):
                raise DomainError(f"context_views must have length {num_items}")
            key = ctx.tobytes()
            if key not in index:
                index[key] = len(rows)
                rows.append(ctx)
            context_row[i] = index[key]
        return cls(
            np.array([g.user_id for g in logs], dtype=np.int64),
            np.array([g.seq_index for g in logs], dtype=np.int64),
            np.array([g.action for g in logs], dtype=np.int64),
            np.array([g.propensity for g in logs], dtype=np.float64),
            np.array([g.click for g in logs], dtype=np.int64),
            context_row,
            np.stack(rows),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i) -> BanditLog:
        return BanditLog(
            int(self.user_id[i]), int(self.seq_index[i]),
            self.contexts[self.context_row[i]], int(self.action[i]),
            float(self.propensity[i]), int(self.click[i]),
        )

    def take(self, idx) -> "BanditLogs":
        idx = np.asarray(idx)
        cp = None if self.click_prob is None else self.click_prob[idx]
        return BanditLogs(self.user_id[idx], self.seq_index[idx], self.action[idx],
                          self.propensity[idx], self.click[idx], self.context_row[idx],
                          self.contexts, cp)

    def empirical_ctr(self) -> float:
        if len(self) == 0:
            return 0.0
        return math.fsum(self.click.tolist()) / len(self)


@dataclass
class Dataset:
    organic: OrganicLog
    bandit: BanditLogs
    num_items: int
    seed: int
    phase: str = "train"
    num_users: int = 0


def _poisson_counts(rng, cfg):
    return int(rng.poisson(cfg.organic_events_mean)), int(rng.poisson(cfg.bandit_events_mean))


def simulate_user(env: Environment, population: tuple, user_id: int, choose_actions):
    """Run one user through an organic block followed by a bandit block.

    ``choose_actions(counts, n, rng)`` returns ``(actions, propensities)`` for
    the ``n`` bandit steps given the user's organic view counts. The user
    drifts once between consecutive events across both blocks.
    """
    cfg = env.config
    state, rng = _spawn(env, population, user_id)
    n_org, n_band = _poisson_counts(rng, cfg)
    total = n_org + n_band

    # omega_t = omega_0 + sigma * sum_{j<t} eps_j
    steps = rng.standard_normal((total, cfg.latent_dim))
    walk = np.zeros((total, cfg.latent_dim))
    if total > 1:
        walk[1:] = np.cumsum(steps[:-1], axis=0)
    omegas = state.omega + cfg.user_drift_sigma * walk

    scores = omegas[:n_org] @ env.embeddings.T
    gumbel = rng.gumbel(size=scores.shape)
    items = np.argmax(scores + gumbel, axis=1) if n_org else np.zeros(0, dtype=np.int64)
    counts = np.bincount(items, minlength=cfg.num_items).astype(np.int64)

    actions, propensities = choose_actions(counts, n_band, rng)
    actions = np.asarray(actions, dtype=np.int64)
    affinity = np.einsum("ij,ij->i", env.embeddings[actions], omegas[n_org:])
    click_prob = _sigmoid(cfg.click_scale * affinity + cfg.click_offset)
    clicks = (rng.random(n_band) < click_prob).astype(np.int64)
    return items.astype(np.int64), counts, actions, np.asarray(propensities, dtype=np.float64), clicks, click_prob


def sample_from(dist: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF sampling of ``n`` indices from a probability vector."""
    cdf = np.cumsum(dist)
    idx = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
    return np.minimum(idx, len(dist) - 1)


def _logging_chooser(policy):
    def choose(counts, n, rng):
        dist = policy.action_distribution(counts)
        if not np.all(dist > 0):
            raise SupportError(
                f"logging policy {policy.name!r} gives zero probability to "
                f"{int(np.sum(dist <= 0))} action(s)")
        actions = sample_from(dist, n, rng)
        return actions, dist[actions]
    return choose


def map_users(fn, user_ids, threads: int = 1):
    """``[fn(u) for u in user_ids]``, optionally on a thread pool; order kept."""
    if threads <= 1 or len(user_ids) < 2:
        return [fn(u) for u in user_ids]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, user_ids))


def generate_dataset(
    env: Environment,
    num_users: int,
    logging_policy,
    phase: str = "train",
    threads: int = 1,
) -> Dataset:
    if phase not in PHASES:
        raise DomainError(f"phase must be one of {sorted(PHASES)}, got {phase!r}")
    if num_users < 0:
        raise DomainError("num_users must be non-negative")
    population = (PHASES[phase],)
    choose = _logging_chooser(logging_policy)
    P = env.num_items

    results = map_users(lambda u: simulate_user(env, population, u, choose), range(num_users), threads)

    org_u, org_s, org_i = [], [], []
    b_u, b_s, b_a, b_p, b_c, b_cp, b_row, contexts = [], [], [], [], [], [], [], []
    for uid, (items, counts, actions, props, clicks, cprob) in enumerate(results):
        n_org, n_band = len(items), len(actions)
        org_u.append(np.full(n_org, uid, dtype=np.int64))
        org_s.append(np.arange(n_org, dtype=np.int64))
        org_i.append(items)
        b_u.append(np.full(n_band, uid, dtype=np.int64))
        b_s.append(np.arange(n_org, n_org + n_band, dtype=np.int64))
        b_a.append(actions)
        b_p.append(props)
        b_c.append(clicks)
        b_cp.append(cprob)
        b_row.append(np.full(n_band, uid, dtype=np.int64))
        contexts.append(counts)

    if num_users == 0:
        return Dataset(OrganicLog.empty(), BanditLogs.empty(P), P, env.config.seed, phase, 0)
    organic = OrganicLog(np.concatenate(org_u), np.concatenate(org_s), np.concatenate(org_i))
    bandit = BanditLogs(
        np.concatenate(b_u), np.concatenate(b_s), np.concatenate(b_a),
        np.concatenate(b_p), np.concatenate(b_c), np.concatenate(b_row),
        np.stack(contexts), np.concatenate(b_cp),
    )
    return Dataset(organic, bandit, P, env.config.seed, phase, num_users)


def with_calibrated_offset(config: EnvConfig, target_ctr: float = 0.01, **kwargs) -> EnvConfig:
    return replace(config, click_offset=calibrate_click_offset(config, target_ctr, **kwargs))
