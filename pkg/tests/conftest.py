import numpy as np
import pytest

from semcom_rl import (ChannelParams, EnvConfig, ScmCatalog, ScmProfile,
                       load_experiment_config)

from helpers import CONFIG_DIR


@pytest.fixture(scope="session")
def default_experiment():
    return load_experiment_config(CONFIG_DIR / "default.yaml")


@pytest.fixture(scope="session")
def default_catalog(default_experiment):
    return default_experiment.environment.catalog


@pytest.fixture
def small_catalog():
    return ScmCatalog(profiles=(
        ScmProfile(name="fast", compute_power=100.0,
                   inference_time_per_image=0.5, distortion_proxy=20.0,
                   payload_bits=8192.0),
        ScmProfile(name="balanced", compute_power=250.0,
                   inference_time_per_image=1.0, distortion_proxy=12.0,
                   payload_bits=4096.0),
        ScmProfile(name="slow", compute_power=300.0,
                   inference_time_per_image=2.0, distortion_proxy=9.0,
                   payload_bits=2048.0),
    ))


@pytest.fixture
def small_env_config(small_catalog):
    return EnvConfig(
        catalog=small_catalog,
        num_users=3,
        total_bandwidth=30e6,
        total_power=3.0,
        latency_cap=12.0,
        episode_length=4,
        distortion_scale=1.0,
        channel=ChannelParams(rayleigh_sigma=0.2, noise_power=1e-8),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
