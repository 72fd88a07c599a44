"""Baseline recommenders fitted on organic views only.

Every model scores items from a user's organic view-count vector (the
*context*). From the scores it derives

* a stochastic policy, either ``softmax(score / temperature)`` or scores
  raised to ``1 / temperature`` and normalised ("proportional"), then mixed
  with the uniform distribution so each item keeps ``epsilon_floor`` mass, and
* a deterministic ranking: descending score, ties broken by ascending item id.

``fit`` takes an :class:`~banditrec.env.OrganicLog` and nothing else, so no
model can ever see bandit feedback.
"""
from __future__ import annotations

import hashlib

import numpy as np

from .errors import DomainError, FitError

VARIANTS = (
    "random",
    "popularity",
    "personalized_popularity",
    "svd",
    "item_knn",
    "user_knn",
)

SAMPLING_FORMS = ("softmax", "proportional")

DEFAULT_HYPERPARAMS = {
    "random": {"seed": 0},
    "popularity": {},
    "personalized_popularity": {},
    "svd": {"rank": 10, "n_iter": 50, "tol": 1e-9, "seed": 0},
    "item_knn": {"k": 20},
    "user_knn": {"k": 20},
}


def _stable_argsort_desc(scores: np.ndarray) -> np.ndarray:
    # stable sort of the negated scores keeps equal scores in ascending id order
    return np.argsort(-scores, kind="stable")


class PolicyModel:
    """Common behaviour of every fitted recommender."""

    variant = "base"

    def __init__(self, num_items: int, name: str | None = None,
                 temperature: float = 1.0, epsilon_floor: float = 0.0,
                 sampling: str = "softmax"):
        if num_items < 1:
            raise DomainError("num_items must be positive")
        if not temperature > 0:
            raise DomainError("temperature must be positive")
        if not 0 <= epsilon_floor <= 1.0 / num_items:
            raise DomainError(f"epsilon_floor must lie in [0, 1/{num_items}]")
        if sampling not in SAMPLING_FORMS:
            raise DomainError(f"sampling must be one of {SAMPLING_FORMS}, got {sampling!r}")
        self.num_items = int(num_items)
        self.name = name or self.variant
        self.temperature = float(temperature)
        self.epsilon_floor = float(epsilon_floor)
        self.sampling = sampling

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, num_items={self.num_items})"

    def hyperparams(self) -> dict:
        return {}

    def _check_context(self, context_views) -> np.ndarray:
        ctx = np.asarray(context_views)
        if ctx.shape != (self.num_items,):
            raise DomainError(
                f"context must have shape ({self.num_items},), got {ctx.shape}")
        return ctx.astype(np.float64)

    def score(self, context_views) -> np.ndarray:
        raise NotImplementedError

    def action_distribution(self, context_views) -> np.ndarray:
        """Stochastic policy over all items.

        ``softmax``: ``softmax(score / T)``. ``proportional``:
        ``score ** (1 / T)`` normalised, i.e. a softmax over log-scores; it
        needs non-negative scores and falls back to uniform when all are 0.
        Either is then mixed with the uniform distribution at weight
        ``epsilon_floor * P``.
        """
        s = self.score(context_views)
        if self.sampling == "proportional":
            if np.any(s < 0):
                raise DomainError("proportional sampling needs non-negative scores")
            z = s ** (1.0 / self.temperature) if self.temperature != 1.0 else s
            total = z.sum()
            dist = z / total if total > 0 else np.full(self.num_items, 1.0 / self.num_items)
        else:
            s = s / self.temperature
            z = np.exp(s - s.max())
            dist = z / z.sum()
        if self.epsilon_floor > 0:
            mix = self.epsilon_floor * self.num_items
            dist = (1.0 - mix) * dist + self.epsilon_floor
        return dist

    def rank(self, context_views, n: int) -> np.ndarray:
        if not 1 <= n <= self.num_items:
            raise DomainError(f"n must lie in [1, {self.num_items}], got {n}")
        return _stable_argsort_desc(self.score(context_views))[:n]

    def top1(self, context_views) -> int:
        return int(self.rank(context_views, 1)[0])

    def with_sampling(self, temperature: float, epsilon_floor: float,
                      sampling: str = "softmax") -> "PolicyModel":
        """Shallow copy with different stochastic-use settings."""
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        PolicyModel.__init__(clone, self.num_items, self.name, temperature, epsilon_floor, sampling)
        return clone

    # persistence hooks
    def _arrays(self) -> dict:
        return {}

    def _load_arrays(self, arrays: dict) -> None:
        pass


class RandomPolicy(PolicyModel):
    """Uniform scores; the ranking is a shuffle seeded by (seed, context)."""

    variant = "random"

    def __init__(self, num_items, seed=0, **kw):
        super().__init__(num_items, **kw)
        self.seed = int(seed)

    def hyperparams(self):
        return {"seed": self.seed}

    def score(self, context_views):
        self._check_context(context_views)
        return np.zeros(self.num_items)

    def rank(self, context_views, n):
        ctx = self._check_context(context_views)
        if not 1 <= n <= self.num_items:
            raise DomainError(f"n must lie in [1, {self.num_items}], got {n}")
        digest = hashlib.blake2b(ctx.astype("<i8").tobytes(), digest_size=8).digest()
        key = int.from_bytes(digest, "little")
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(key,)))
        return rng.permutation(self.num_items)[:n]


class PopularityPolicy(PolicyModel):
    """Global organic view counts; ignores the context."""

    variant = "popularity"

    def __init__(self, num_items, counts=None, **kw):
        super().__init__(num_items, **kw)
        self.counts = np.zeros(num_items) if counts is None else np.asarray(counts, dtype=np.float64)

    def score(self, context_views):
        self._check_context(context_views)
        return self.counts.copy()

    def _arrays(self):
        return {"counts": self.counts}

    def _load_arrays(self, arrays):
        self.counts = np.asarray(arrays["counts"], dtype=np.float64)


class PersonalizedPopularityPolicy(PolicyModel):
    """The item the user has viewed most often so far."""

    variant = "personalized_popularity"

    def score(self, context_views):
        return self._check_context(context_views)


class SVDPolicy(PolicyModel):
    """Rank-R projection of the context onto the top right singular vectors
    of the user-item count matrix."""

    variant = "svd"

    def __init__(self, num_items, rank=10, n_iter=50, tol=1e-9, seed=0, **kw):
        super().__init__(num_items, **kw)
        self.rank_ = int(rank)
        self.n_iter = int(n_iter)
        self.tol = float(tol)
        self.seed = int(seed)
        self.singular_values = np.zeros(0)
        self.item_factors = np.zeros((num_items, 0))

    def hyperparams(self):
        return {"rank": self.rank_, "n_iter": self.n_iter, "tol": self.tol, "seed": self.seed}

    def fit_matrix(self, matrix):
        _, s, v = truncated_svd(matrix, self.rank_, self.n_iter, self.tol, self.seed)
        self.singular_values = s
        self.item_factors = v
        return self

    def score(self, context_views):
        ctx = self._check_context(context_views)
        return self.item_factors @ (self.item_factors.T @ ctx)

    def _arrays(self):
        return {"singular_values": self.singular_values, "item_factors": self.item_factors}

    def _load_arrays(self, arrays):
        self.singular_values = np.asarray(arrays["singular_values"], dtype=np.float64)
        v = np.asarray(arrays["item_factors"], dtype=np.float64)
        self.item_factors = v.reshape(self.num_items, -1)


class ItemKNNPolicy(PolicyModel):
    """Item-based kNN: each item keeps its ``k`` most cosine-similar items.

    ``score(j) = sum_i context[i] * sim(i, j)`` over the retained neighbours
    ``i`` of ``j``. Self-similarity is 1, so every viewed item is its own
    nearest neighbour and repeat views score highly.
    """

    variant = "item_knn"

    def __init__(self, num_items, k=20, **kw):
        super().__init__(num_items, **kw)
        self.k = int(k)
        self.neighbors = np.zeros((num_items, num_items))

    def hyperparams(self):
        return {"k": self.k}

    def fit_matrix(self, matrix):
        sim = cosine_similarity(np.asarray(matrix, dtype=np.float64).T)
        # column j keeps its k largest similarities (ties to the lower item id)
        pruned = np.zeros_like(sim)
        k = min(self.k, self.num_items)
        for j in range(self.num_items):
            keep = _stable_argsort_desc(sim[:, j])[:k]
            pruned[keep, j] = sim[keep, j]
        self.neighbors = pruned
        return self

    def score(self, context_views):
        ctx = self._check_context(context_views)
        return ctx @ self.neighbors

    def _arrays(self):
        return {"neighbors": self.neighbors}

    def _load_arrays(self, arrays):
        self.neighbors = np.asarray(arrays["neighbors"], dtype=np.float64).reshape(
            self.num_items, self.num_items)


class UserKNNPolicy(PolicyModel):
    """User-based kNN against the retained training count matrix.

    Query contexts are compared to training rows only; they are never added
    to the training matrix.
    """

    variant = "user_knn"

    def __init__(self, num_items, k=20, **kw):
        super().__init__(num_items, **kw)
        self.k = int(k)
        self.train_matrix = np.zeros((0, num_items))
        self._norms = np.zeros(0)

    def hyperparams(self):
        return {"k": self.k}

    def fit_matrix(self, matrix):
        self.train_matrix = np.asarray(matrix, dtype=np.float64)
        self._norms = np.linalg.norm(self.train_matrix, axis=1)
        return self

    def score(self, context_views):
        ctx = self._check_context(context_views)
        if len(self.train_matrix) == 0:
            return np.zeros(self.num_items)
        cnorm = np.linalg.norm(ctx)
        denom = self._norms * cnorm
        dots = self.train_matrix @ ctx
        sims = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)
        top = _stable_argsort_desc(sims)[: self.k]
        return sims[top] @ self.train_matrix[top]

    def _arrays(self):
        return {"train_matrix": self.train_matrix}

    def _load_arrays(self, arrays):
        m = np.asarray(arrays["train_matrix"], dtype=np.float64)
        self.fit_matrix(m.reshape(-1, self.num_items))


_CLASSES = {
    cls.variant: cls
    for cls in (RandomPolicy, PopularityPolicy, PersonalizedPopularityPolicy,
                SVDPolicy, ItemKNNPolicy, UserKNNPolicy)
}


def policy_class(variant: str):
    try:
        return _CLASSES[variant]
    except KeyError:
        raise DomainError(f"unknown policy variant {variant!r}; known: {', '.join(VARIANTS)}") from None


# --------------------------------------------------------------------------
# Linear algebra


def cosine_similarity(vectors: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity of the rows of ``vectors``.

    Rows with zero norm have similarity 0 to everything, including themselves.
    """
    v = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(v, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = v / safe[:, None]
    sim = unit @ unit.T
    sim = 0.5 * (sim + sim.T)
    nz = norms > 0
    sim[np.ix_(nz, nz)] = np.clip(sim[np.ix_(nz, nz)], -1.0, 1.0)
    idx = np.flatnonzero(nz)
    sim[idx, idx] = 1.0
    return sim


def truncated_svd(matrix, rank: int, n_iter: int = 50, tol: float = 1e-9, seed: int = 0):
    """Top-``rank`` singular triplets by block power (subspace) iteration.

    Starts from a seeded Gaussian block, alternates multiplication by the
    matrix and its transpose with QR re-orthonormalisation, and stops after
    ``n_iter`` sweeps or once the Ritz singular values change by less than
    ``tol`` (relative). The final Rayleigh-Ritz step is a dense SVD of the
    small ``m x rank`` projected matrix.

    Returns ``(u, s, v)`` with ``matrix ~= u @ diag(s) @ v.T``, ``s``
    non-negative and non-increasing.
    """
    a = np.asarray(matrix, dtype=np.float64)
    m, n = a.shape
    r = min(int(rank), m, n)
    if r < 1:
        raise FitError("truncated SVD needs a non-empty matrix and rank >= 1")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, r)))
    prev = None
    for _ in range(n_iter):
        z, _ = np.linalg.qr(a @ q)
        q, _ = np.linalg.qr(a.T @ z)
        s = np.linalg.svd(a @ q, compute_uv=False)
        if prev is not None and np.all(np.abs(s - prev) <= tol * max(s[0], 1e-300)):
            break
        prev = s
    u, s, wt = np.linalg.svd(a @ q, full_matrices=False)
    return u, s, q @ wt.T


# --------------------------------------------------------------------------
# Fitting


def fit(variant: str, organic, num_items: int, hyperparams: dict | None = None,
        name: str | None = None, temperature: float = 1.0,
        epsilon_floor: float = 0.0, sampling: str = "softmax") -> PolicyModel:
    """Fit one baseline on organic events.

    ``organic`` is an :class:`~banditrec.env.OrganicLog`. Count-based
    variants need at least one event; popularity falls back to uniform
    scores when there is none.
    """
    cls = policy_class(variant)
    params = dict(DEFAULT_HYPERPARAMS[variant])
    params.update(hyperparams or {})
    unknown = set(params) - set(DEFAULT_HYPERPARAMS[variant])
    if unknown:
        raise DomainError(f"unknown hyperparameters for {variant}: {sorted(unknown)}")
    if len(organic) and (organic.item_id.min() < 0 or organic.item_id.max() >= num_items):
        raise DomainError(f"organic item ids must lie in [0, {num_items})")

    model = cls(num_items, name=name, temperature=temperature,
                epsilon_floor=epsilon_floor, sampling=sampling, **params)
    if variant == "popularity":
        model.counts = np.bincount(organic.item_id, minlength=num_items).astype(np.float64)
    elif variant in ("svd", "item_knn", "user_knn"):
        if len(organic) == 0:
            raise FitError(f"{variant} cannot be fitted on empty organic data")
        _, counts = organic.count_matrix(num_items)
        model.fit_matrix(counts.astype(np.float64))
    return model


def logging_policy(num_items: int, form: str = "proportional", temperature: float = 1.0,
                   epsilon_floor: float | None = None) -> PersonalizedPopularityPolicy:
    """The stochastic personalised-popularity logger used to collect bandit data.

    By default it shows each item with probability proportional to the
    user's view count of it, floored at ``1 / (10 P)``.
    """
    if epsilon_floor is None:
        epsilon_floor = 1.0 / (10 * num_items)
    return PersonalizedPopularityPolicy(
        num_items, name="personalized_popularity", temperature=temperature,
        epsilon_floor=epsilon_floor, sampling=form)


# --------------------------------------------------------------------------
# Persistence

FORMAT_VERSION = 1


def to_blob(model: PolicyModel) -> dict:
    """JSON-compatible dict; floats survive a json round trip exactly."""
    return {
        "format_version": FORMAT_VERSION,
        "variant": model.variant,
        "name": model.name,
        "num_items": model.num_items,
        "temperature": model.temperature,
        "epsilon_floor": model.epsilon_floor,
        "sampling": model.sampling,
        "hyperparams": model.hyperparams(),
        "arrays": {
            k: {"shape": list(np.shape(v)), "data": np.asarray(v, dtype=np.float64).ravel().tolist()}
            for k, v in model._arrays().items()
        },
    }


def from_blob(blob: dict) -> PolicyModel:
    if blob.get("format_version") != FORMAT_VERSION:
        raise DomainError(f"unsupported model format version {blob.get('format_version')!r}")
    cls = policy_class(blob["variant"])
    model = cls(blob["num_items"], name=blob["name"], temperature=blob["temperature"],
                epsilon_floor=blob["epsilon_floor"], sampling=blob.get("sampling", "softmax"),
                **blob["hyperparams"])
    arrays = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
              for k, v in blob["arrays"].items()}
    model._load_arrays(arrays)
    return model
