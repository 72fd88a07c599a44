"""Compare organic LOOCV, clipped IPS and simulated A/B tests on a
recommendation simulator."""
from .abtest import AbTestReport, run_ab_suite, run_abtest
from .counterfactual import CipsConfig, EstimateReport, cips, clip_sweep, ips, rank_by_ucb
from .env import EnvConfig, create_env, generate_dataset
from .organic_eval import HitRateReport, run_loocv
from .policies import VARIANTS, fit, logging_policy

__version__ = "0.1.0"

__all__ = [
    "AbTestReport", "CipsConfig", "EnvConfig", "EstimateReport", "HitRateReport", "VARIANTS",
    "cips", "clip_sweep", "create_env", "fit", "generate_dataset", "ips", "logging_policy",
    "rank_by_ucb", "run_ab_suite", "run_abtest", "run_loocv",
]
