import numpy as np
import pytest

from banditrec.env import EnvConfig, create_env, generate_dataset
from banditrec.policies import logging_policy


@pytest.fixture(scope="session")
def small_config():
    return EnvConfig(num_items=20, latent_dim=4, click_scale=1.0, click_offset=-3.0,
                     organic_events_mean=10.0, bandit_events_mean=30.0, seed=11)


@pytest.fixture(scope="session")
def small_env(small_config):
    return create_env(small_config)


@pytest.fixture(scope="session")
def small_logger(small_config):
    return logging_policy(small_config.num_items)


@pytest.fixture(scope="session")
def small_dataset(small_env, small_logger):
    return generate_dataset(small_env, 60, small_logger, "test")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
