"""Leave-one-out cross-validation with hit rate at k on organic views."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .env import OrganicLog
from .errors import DomainError
from .policies import fit


@dataclass
class LoocvSplit:
    fold_seed: int
    users: np.ndarray          # evaluated users, ascending
    held_out_item: np.ndarray  # one item per evaluated user
    held_out_index: np.ndarray  # row of the held-out event in the source log
    train: OrganicLog
    excluded_users: int


@dataclass
class HitRateReport:
    policy: str
    k_folds: int
    per_fold: list
    mean: float
    std: float
    excluded_users: int
    n_users_evaluated: int
    # False when no user was eligible; mean and std are then 0.0 placeholders
    defined: bool = True
    fold_users: list = field(default_factory=list)


def make_split(organic: OrganicLog, fold_seed: int) -> LoocvSplit:
    """Hold out one uniformly chosen event for every user with >= 2 events."""
    rng = np.random.default_rng(np.random.SeedSequence(int(fold_seed)))
    order = np.lexsort((organic.seq_index, organic.user_id))
    users, starts, sizes = np.unique(organic.user_id[order], return_index=True, return_counts=True)
    eligible = sizes >= 2
    # one uniform draw per user in ascending user order, eligible or not,
    # so a user's choice does not depend on which other users are eligible
    draws = rng.random(len(users))
    picks = np.minimum((draws * sizes).astype(np.int64), sizes - 1)
    held = order[starts[eligible] + picks[eligible]]
    mask = np.ones(len(organic), dtype=bool)
    mask[held] = False
    return LoocvSplit(
        fold_seed=int(fold_seed),
        users=users[eligible],
        held_out_item=organic.item_id[held],
        held_out_index=held,
        train=organic.subset(mask),
        excluded_users=int((~eligible).sum()),
    )


def hit_rate_at_k(model, split: LoocvSplit, k: int = 1, num_items: int | None = None) -> float:
    """Fraction of evaluated users whose held-out item is in the model's top k.

    The context for each user is their training-portion view counts.
    """
    num_items = num_items or model.num_items
    if len(split.users) == 0:
        return 0.0
    _, counts = split.train.count_matrix(num_items, split.users)
    hits = sum(
        int(item in model.rank(ctx, k))
        for ctx, item in zip(counts, split.held_out_item.tolist())
    )
    return hits / len(split.users)


def run_loocv(organic: OrganicLog, num_items: int, variants: dict, k_folds: int = 10,
              root_seed: int = 0, k: int = 1) -> list:
    """k-fold LOOCV: a fresh split per fold, every variant refitted per fold.

    ``variants`` maps a policy name to ``(variant, hyperparams)``.
    Fold ``f`` uses seed ``root_seed + f``.
    """
    if k_folds < 1:
        raise DomainError("k_folds must be at least 1")
    per_fold = {name: [] for name in variants}
    fold_users = []
    excluded = 0
    for f in range(k_folds):
        split = make_split(organic, root_seed + f)
        excluded = split.excluded_users
        fold_users.append(len(split.users))
        for name, (variant, params) in variants.items():
            if len(split.users) == 0:
                continue
            model = fit(variant, split.train, num_items, params, name=name)
            per_fold[name].append(hit_rate_at_k(model, split, k, num_items))

    reports = []
    for name in variants:
        vals = per_fold[name]
        defined = len(vals) > 0
        mean = math.fsum(vals) / len(vals) if defined else 0.0
        std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        reports.append(HitRateReport(
            policy=name, k_folds=k_folds, per_fold=vals, mean=mean, std=std,
            excluded_users=excluded, n_users_evaluated=fold_users[0] if fold_users else 0,
            defined=defined, fold_users=fold_users,
        ))
    return reports
