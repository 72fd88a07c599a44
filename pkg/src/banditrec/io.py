"""Dataset, model and report serialization.

Datasets live in a directory holding ``organic.jsonl``, ``bandit.jsonl`` and
``meta.json``. Floats are written with ``repr`` so they read back bit-exact.
Reports are UTF-8 CSV with a header row and reals at 12 significant digits.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .env import BanditLogs, Dataset, OrganicLog
from .errors import DataFormatError
from .policies import from_blob, to_blob

ORGANIC_FILE = "organic.jsonl"
BANDIT_FILE = "bandit.jsonl"
META_FILE = "meta.json"


def write_dataset(dataset: Dataset, directory, env_config=None, extra_meta=None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    org = dataset.organic
    with open(directory / ORGANIC_FILE, "w", encoding="utf-8", newline="\n") as fh:
        for u, s, i in zip(org.user_id.tolist(), org.seq_index.tolist(), org.item_id.tolist()):
            fh.write(f'{{"user_id": {u}, "seq_index": {s}, "item_id": {i}}}\n')

    b = dataset.bandit
    ctx_text = {}
    with open(directory / BANDIT_FILE, "w", encoding="utf-8", newline="\n") as fh:
        for u, s, row, a, p, c in zip(b.user_id.tolist(), b.seq_index.tolist(), b.context_row.tolist(),
                                      b.action.tolist(), b.propensity.tolist(), b.click.tolist()):
            text = ctx_text.get(row)
            if text is None:
                text = ctx_text[row] = "[" + ", ".join(map(str, b.contexts[row].tolist())) + "]"
            fh.write(f'{{"user_id": {u}, "seq_index": {s}, "context_views": {text}, '
                     f'"action": {a}, "propensity": {p!r}, "click": {c}}}\n')

    meta = {
        "phase": dataset.phase,
        "num_items": dataset.num_items,
        "num_users": dataset.num_users,
        "seed": dataset.seed,
        "organic_count": len(org),
        "bandit_count": len(b),
        "clicks": int(b.click.sum()),
    }
    if env_config is not None:
        meta["env"] = env_config.to_dict()
    if extra_meta:
        meta.update(extra_meta)
    with open(directory / META_FILE, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory


def _records(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"invalid JSON ({exc.msg})", path, lineno) from None
            if not isinstance(rec, dict):
                raise DataFormatError("expected a JSON object", path, lineno)
            yield lineno, rec


def _int_field(rec, key, path, lineno, lo=0, hi=None):
    v = rec.get(key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise DataFormatError(f"field {key!r} must be an integer", path, lineno)
    if v < lo or (hi is not None and v >= hi):
        raise DataFormatError(f"field {key!r}={v} out of range", path, lineno)
    return v


def read_meta(directory) -> dict:
    path = Path(directory) / META_FILE
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"invalid JSON ({exc.msg})", path, exc.lineno) from None


def read_organic(path, num_items: int) -> OrganicLog:
    path = Path(path)
    rows = []
    for lineno, rec in _records(path):
        rows.append((
            _int_field(rec, "user_id", path, lineno),
            _int_field(rec, "seq_index", path, lineno),
            _int_field(rec, "item_id", path, lineno, 0, num_items),
        ))
    return OrganicLog.from_events(rows) if rows else OrganicLog.empty()


def read_bandit(path, num_items: int) -> BanditLogs:
    path = Path(path)
    cols = {k: [] for k in ("user_id", "seq_index", "action", "propensity", "click", "row")}
    contexts, index = [], {}
    for lineno, rec in _records(path):
        cols["user_id"].append(_int_field(rec, "user_id", path, lineno))
        cols["seq_index"].append(_int_field(rec, "seq_index", path, lineno))
        cols["action"].append(_int_field(rec, "action", path, lineno, 0, num_items))
        cols["click"].append(_int_field(rec, "click", path, lineno, 0, 2))
        p = rec.get("propensity")
        if isinstance(p, bool) or not isinstance(p, (int, float)) or not 0 < p < 1:
            raise DataFormatError("field 'propensity' must be a number in (0, 1)", path, lineno)
        cols["propensity"].append(float(p))
        ctx = rec.get("context_views")
        if not isinstance(ctx, list) or len(ctx) != num_items or not all(
                isinstance(x, int) and not isinstance(x, bool) and x >= 0 for x in ctx):
            raise DataFormatError(
                f"field 'context_views' must be {num_items} non-negative integers", path, lineno)
        key = tuple(ctx)
        row = index.get(key)
        if row is None:
            row = index[key] = len(contexts)
            contexts.append(ctx)
        cols["row"].append(row)
    if not contexts:
        return BanditLogs.empty(num_items)
    return BanditLogs(
        np.array(cols["user_id"], dtype=np.int64),
        np.array(cols["seq_index"], dtype=np.int64),
        np.array(cols["action"], dtype=np.int64),
        np.array(cols["propensity"], dtype=np.float64),
        np.array(cols["click"], dtype=np.int64),
        np.array(cols["row"], dtype=np.int64),
        np.array(contexts, dtype=np.int64),
    )


def read_dataset(directory) -> Dataset:
    directory = Path(directory)
    meta = read_meta(directory)
    try:
        num_items = int(meta["num_items"])
    except (KeyError, TypeError, ValueError):
        raise DataFormatError("meta.json lacks an integer 'num_items'", directory / META_FILE) from None
    organic = read_organic(directory / ORGANIC_FILE, num_items)
    bandit = read_bandit(directory / BANDIT_FILE, num_items)
    return Dataset(organic, bandit, num_items, int(meta.get("seed", 0)),
                   meta.get("phase", "train"), int(meta.get("num_users", 0)))


# --------------------------------------------------------------------------
# Models


def save_model(model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_blob(model), fh)


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        try:
            blob = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"invalid JSON ({exc.msg})", path, exc.lineno) from None
    return from_blob(blob)


# --------------------------------------------------------------------------
# CSV


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.12g}"
    return str(x)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path) -> list:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
