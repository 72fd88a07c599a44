import json
import math

import numpy as np
import pytest

from banditrec.cli import main
from banditrec.config import PRESETS, from_dict, load_config
from banditrec.errors import ConfigError, DataFormatError
from banditrec.io import (
    fmt,
    load_model,
    read_bandit,
    read_csv,
    read_dataset,
    save_model,
    write_csv,
    write_dataset,
)
from banditrec.policies import VARIANTS, fit

TINY = """
[run]
seed = 3
threads = 1

[env]
num_items = 12
latent_dim = 4
click_scale = 1.0
click_offset = "auto"
organic_events_mean = 8
bandit_events_mean = 20

[data]
train_users = 40
test_users = 60

[loocv]
folds = 3

[cips]
bootstrap_samples = 200
m_grid = [1, 5, "inf"]

[abtest]
users_per_arm = 50
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY)
    return path


# -- dataset files ------------------------------------------------------------------

def test_dataset_round_trip(tmp_path, small_dataset, small_config):
    write_dataset(small_dataset, tmp_path / "d", small_config)
    back = read_dataset(tmp_path / "d")
    a, b = small_dataset.bandit, back.bandit
    assert back.num_items == small_dataset.num_items
    for name in ("user_id", "seq_index", "action", "click"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert a.propensity.tobytes() == b.propensity.tobytes()
    assert np.array_equal(a.contexts[a.context_row], b.contexts[b.context_row])
    assert np.array_equal(small_dataset.organic.item_id, back.organic.item_id)
    meta = json.loads((tmp_path / "d" / "meta.json").read_text())
    assert meta["env"]["num_items"] == small_config.num_items
    assert meta["bandit_count"] == len(a)


def test_bandit_line_format(tmp_path, small_dataset):
    write_dataset(small_dataset, tmp_path / "d")
    first = json.loads((tmp_path / "d" / "bandit.jsonl").read_text().splitlines()[0])
    assert set(first) == {"user_id", "seq_index", "context_views", "action", "propensity", "click"}
    assert len(first["context_views"]) == small_dataset.num_items


@pytest.mark.parametrize("line, needle", [
    ("{not json", "invalid JSON"),
    ('{"user_id": 0, "seq_index": 0, "context_views": [0, 0], "action": 5, "propensity": 0.5, "click": 1}',
     "'action'"),
    ('{"user_id": 0, "seq_index": 0, "context_views": [0, 0], "action": 1, "propensity": 1.0, "click": 1}',
     "'propensity'"),
    ('{"user_id": 0, "seq_index": 0, "context_views": [0], "action": 1, "propensity": 0.5, "click": 1}',
     "'context_views'"),
    ('{"user_id": 0, "seq_index": 0, "context_views": [0, 0], "action": 1, "propensity": 0.5, "click": 2}',
     "'click'"),
])
def test_malformed_bandit_line(tmp_path, line, needle):
    good = '{"user_id": 0, "seq_index": 0, "context_views": [1, 0], "action": 0, "propensity": 0.5, "click": 0}'
    path = tmp_path / "bandit.jsonl"
    path.write_text(good + "\n" + line + "\n")
    with pytest.raises(DataFormatError) as err:
        read_bandit(path, 2)
    assert err.value.lineno == 2
    assert needle in str(err.value) and ":2:" in str(err.value)


def test_model_round_trip(tmp_path, small_dataset):
    for v in VARIANTS:
        model = fit(v, small_dataset.organic, small_dataset.num_items)
        save_model(model, tmp_path / f"{v}.json")
        clone = load_model(tmp_path / f"{v}.json")
        ctx = small_dataset.bandit.contexts[0]
        assert model.score(ctx).tobytes() == clone.score(ctx).tobytes()


def test_csv_formatting(tmp_path):
    assert fmt(1 / 3) == "0.333333333333"
    assert fmt(math.inf) == "inf"
    assert fmt(7) == "7" and fmt(True) == "true"
    write_csv(tmp_path / "r.csv", ["a", "b"], [["x", 0.5]])
    assert read_csv(tmp_path / "r.csv") == [{"a": "x", "b": "0.5"}]


# -- config -------------------------------------------------------------------------

@pytest.mark.parametrize("name", PRESETS)
def test_presets_load(name):
    cfg = load_config(name)
    assert cfg.clip_m == 15.0
    assert cfg.env.click_scale == 3.0 and cfg.logging_form == "proportional"


def test_desk_preset_values():
    cfg = load_config("desk")
    assert (cfg.env.num_items, cfg.train_users, cfg.test_users, cfg.abtest_users) == (50, 200, 500, 2000)
    assert cfg.m_grid == (1.0, 2.0, 5.0, 15.0, math.inf)


@pytest.mark.parametrize("doc", [
    {"bogus": {}},
    {"env": {"num_items": 1}},
    {"env": {"colour": 1}},
    {"policies": {"variants": ["random", "deep_net"]}},
    {"policies": {"svd": {"depth": 3}}},
    {"cips": {"m_grid": [15, 1]}},
    {"cips": {"clip_m": 0}},
    {"data": {"train_users": 0}},
    {"data": {"train_users": "many"}},
])
def test_invalid_config_documents(doc):
    with pytest.raises(ConfigError):
        from_dict(doc)


def test_seed_override_recalibrates(tiny_config):
    a, b = load_config(tiny_config), load_config(tiny_config, seed=4)
    assert a.seed == 3 and b.seed == 4 and b.env.seed == 4
    assert a.env.click_offset != b.env.click_offset


# -- CLI ------------------------------------------------------------------------------

def test_cli_end_to_end(tmp_path, tiny_config, capsys):
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(tiny_config), "--out", str(out)]) == 0
    assert (out / "train" / "organic.jsonl").exists() and (out / "test" / "meta.json").exists()
    assert main(["eval", "--config", str(tiny_config), "--out", str(out)]) == 0
    cmp = read_csv(out / "comparison.csv")
    assert list(cmp[0]) == ["policy", "loocv_hr_at_1", "loocv_std", "cips_estimate", "cips_ci_low",
                            "cips_ci_high", "ab_ctr", "ab_ci_low", "ab_ci_high",
                            "loocv_rank", "cips_ucb_rank", "ab_rank"]
    assert [r["policy"] for r in cmp] == list(VARIANTS)
    for col in ("loocv_rank", "cips_ucb_rank", "ab_rank"):
        assert sorted(int(r[col]) for r in cmp) == list(range(1, 7))
    lo = read_csv(out / "loocv_report.csv")
    assert len(lo) == 6 * 3 and list(lo[0]) == ["policy", "fold", "hr_at_1"]
    cp = read_csv(out / "cips_report.csv")
    assert list(cp[0]) == ["policy", "estimator", "m", "estimate", "ci_low", "ci_high", "n", "ess",
                           "clip_fraction"]
    onpolicy = [r for r in cp if r["estimator"] == "cips-onpolicy"][0]
    clicks = json.loads((out / "test" / "meta.json").read_text())["clicks"]
    assert float(onpolicy["estimate"]) == pytest.approx(clicks / int(onpolicy["n"]), abs=1e-12)
    ab = read_csv(out / "abtest_report.csv")
    assert list(ab[0]) == ["policy", "impressions", "clicks", "ctr", "ci_low", "ci_high"]

    assert main(["sweep-m", "--config", str(tiny_config), "--out", str(out)]) == 0
    sweep = read_csv(out / "clip_sweep.csv")
    assert len(sweep) == 6 * 3
    for v in VARIANTS:
        est = [float(r["estimate"]) for r in sweep if r["policy"] == v]
        assert est == sorted(est)
    assert "Kendall tau" in capsys.readouterr().out


def test_cli_calibrate(capsys):
    assert main(["calibrate-click", "--samples", "2000", "--target-ctr", "0.02"]) == 0
    assert "click_offset = " in capsys.readouterr().out


def test_cli_config_error_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[env]\nnum_items = 1\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert main(["simulate", "--config", str(tmp_path / "missing.toml")]) == 1
    assert main(["simulate", "--config", "nonexistent-preset"]) == 1
    assert "config error" in capsys.readouterr().err


def test_cli_missing_data_exit_2(tmp_path, tiny_config):
    assert main(["eval", "--config", str(tiny_config), "--out", str(tmp_path / "nothing")]) == 2


def test_cli_malformed_data_exit_3(tmp_path, tiny_config, capsys):
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(tiny_config), "--out", str(out)]) == 0
    path = out / "test" / "bandit.jsonl"
    lines = path.read_text().splitlines()
    lines[4] = lines[4].replace('"click": ', '"click": 7, "x": ')
    path.write_text("\n".join(lines) + "\n")
    assert main(["eval", "--config", str(tiny_config), "--out", str(out)]) == 3
    assert "bandit.jsonl:5:" in capsys.readouterr().err
