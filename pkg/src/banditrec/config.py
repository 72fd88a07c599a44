"""Experiment configuration loaded from sectioned TOML files."""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .counterfactual import CipsConfig
from .env import EnvConfig, calibrate_click_offset
from .errors import ConfigError
from .policies import DEFAULT_HYPERPARAMS, VARIANTS

PRESETS = ("desk", "full")
CALIBRATION_SAMPLES = 200_000


@dataclass
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    train_users: int = 2000
    test_users: int = 5000
    variants: tuple = VARIANTS
    hyperparams: dict = field(default_factory=dict)
    logging_form: str = "proportional"
    logging_temperature: float = 1.0
    logging_epsilon_floor: float | None = None
    loocv_folds: int = 10
    clip_m: float = 15.0
    m_grid: tuple = (1.0, 2.0, 5.0, 15.0, math.inf)
    bootstrap_samples: int = 1000
    ci_level: float = 0.95
    resample: str = "users"
    abtest_users: int = 5000
    abtest_mode: str = "deterministic"
    out: Path = Path("runs/default")
    seed: int = 0
    threads: int = 1
    target_ctr: float = 0.01

    def __post_init__(self):
        for name in ("train_users", "test_users", "abtest_users", "loocv_folds", "threads"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        unknown = [v for v in self.variants if v not in VARIANTS]
        if unknown:
            raise ConfigError(f"unknown policy variants: {unknown}")
        if len(set(self.variants)) != len(self.variants):
            raise ConfigError("policy variants must be distinct")
        if self.logging_form not in ("proportional", "softmax"):
            raise ConfigError("logging form must be 'proportional' or 'softmax'")
        if self.resample not in ("users", "logs"):
            raise ConfigError("cips resample must be 'users' or 'logs'")
        if self.abtest_mode not in ("deterministic", "stochastic"):
            raise ConfigError("abtest mode must be 'deterministic' or 'stochastic'")
        grid = list(self.m_grid)
        if not grid or any(not m > 0 for m in grid) or grid != sorted(grid):
            raise ConfigError("m_grid must be positive and ascending")
        # surfaces invalid clip/bootstrap settings as config errors
        try:
            self.cips_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def cips_config(self, clip_m: float | None = None) -> CipsConfig:
        return CipsConfig(self.clip_m if clip_m is None else clip_m,
                          self.bootstrap_samples, self.ci_level, self.seed, self.resample)

    def policy_params(self, variant: str) -> dict:
        return dict(self.hyperparams.get(variant, {}))

    def with_overrides(self, seed=None, out=None, threads=None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=int(seed), env=replace(cfg.env, seed=int(seed)))
        if out is not None:
            cfg = replace(cfg, out=Path(out))
        if threads is not None:
            cfg = replace(cfg, threads=int(threads))
        return cfg


def _real(value, key):
    if value == "inf":
        return math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    return float(value)


def _int(value, key):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    return value


_KNOWN = {
    "run": {"seed", "out", "threads"},
    "env": {"num_items", "latent_dim", "user_drift_sigma", "click_scale", "click_offset",
            "target_ctr", "organic_events_mean", "bandit_events_mean"},
    "data": {"train_users", "test_users"},
    "logging": {"form", "temperature", "epsilon_floor"},
    "policies": {"variants", *VARIANTS},
    "loocv": {"folds"},
    "cips": {"clip_m", "m_grid", "bootstrap_samples", "ci_level", "resample"},
    "abtest": {"users_per_arm", "mode"},
}


def from_dict(doc: dict, seed=None) -> ExperimentConfig:
    """Build a config from parsed TOML. ``seed`` overrides ``[run] seed``
    before the click offset is calibrated."""
    for section, body in doc.items():
        if section not in _KNOWN:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        extra = set(body) - _KNOWN[section]
        if extra:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(extra)}")
    run = doc.get("run", {})
    env_doc = doc.get("env", {})
    data = doc.get("data", {})
    logging = doc.get("logging", {})
    pol = doc.get("policies", {})
    cips = doc.get("cips", {})
    ab = doc.get("abtest", {})

    root_seed = _int(run.get("seed", 0), "run.seed") if seed is None else int(seed)
    target_ctr = _real(env_doc.get("target_ctr", 0.01), "env.target_ctr")
    env_kwargs = {"seed": root_seed}
    for key in ("num_items", "latent_dim"):
        if key in env_doc:
            env_kwargs[key] = _int(env_doc[key], f"env.{key}")
    for key in ("user_drift_sigma", "click_scale", "organic_events_mean", "bandit_events_mean"):
        if key in env_doc:
            env_kwargs[key] = _real(env_doc[key], f"env.{key}")
    offset = env_doc.get("click_offset", "auto")
    try:
        env = EnvConfig(**env_kwargs)
        if offset == "auto":
            env = replace(env, click_offset=calibrate_click_offset(
                env, target_ctr, num_samples=CALIBRATION_SAMPLES))
        else:
            env = replace(env, click_offset=_real(offset, "env.click_offset"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    floor = logging.get("epsilon_floor", "auto")
    hyper = {}
    for v in VARIANTS:
        if v in pol:
            extra = set(pol[v]) - set(DEFAULT_HYPERPARAMS[v])
            if extra:
                raise ConfigError(f"unknown hyperparameters in [policies.{v}]: {sorted(extra)}")
            hyper[v] = dict(pol[v])

    return ExperimentConfig(
        env=env,
        train_users=_int(data.get("train_users", 2000), "data.train_users"),
        test_users=_int(data.get("test_users", 5000), "data.test_users"),
        variants=tuple(pol.get("variants", VARIANTS)),
        hyperparams=hyper,
        logging_form=logging.get("form", "proportional"),
        logging_temperature=_real(logging.get("temperature", 1.0), "logging.temperature"),
        logging_epsilon_floor=None if floor == "auto" else _real(floor, "logging.epsilon_floor"),
        loocv_folds=_int(doc.get("loocv", {}).get("folds", 10), "loocv.folds"),
        clip_m=_real(cips.get("clip_m", 15.0), "cips.clip_m"),
        m_grid=tuple(_real(m, "cips.m_grid") for m in cips.get("m_grid", [1, 2, 5, 15, "inf"])),
        bootstrap_samples=_int(cips.get("bootstrap_samples", 1000), "cips.bootstrap_samples"),
        ci_level=_real(cips.get("ci_level", 0.95), "cips.ci_level"),
        resample=cips.get("resample", "users"),
        abtest_users=_int(ab.get("users_per_arm", 5000), "abtest.users_per_arm"),
        abtest_mode=ab.get("mode", "deterministic"),
        out=Path(run.get("out", "runs/default")),
        seed=root_seed,
        threads=_int(run.get("threads", 1), "run.threads"),
        target_ctr=target_ctr,
    )


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return resources.files("banditrec").joinpath("configs").joinpath(f"{name}.toml").read_text(encoding="utf-8")


def load_config(source: str | Path, seed=None) -> ExperimentConfig:
    """Load a TOML file, or one of the bundled presets by name."""
    if str(source) in PRESETS:
        text = preset_text(str(source))
    else:
        try:
            text = Path(source).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {source}: {exc.strerror}") from None
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return from_dict(doc, seed=seed)
