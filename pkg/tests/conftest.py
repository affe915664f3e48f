import pytest
from hypothesis import settings

from models.mc_engine import PathConfig
from models.params import ModelParams

# closed forms run adaptive quadrature; per-example time varies a lot
settings.register_profile("offlab", deadline=None, max_examples=30)
settings.load_profile("offlab")


@pytest.fixture
def base_params():
    return ModelParams(sr_true=0.4, theta=0.7, f=0.05, t_years=20.0, include_sr_correction=False)


@pytest.fixture
def check_params():
    """The point used for simulation cross-checks."""
    return ModelParams(sr_true=0.3, theta=0.7, f=0.025, t_years=10.0, include_sr_correction=False)


@pytest.fixture
def gaussian_config(check_params):
    return PathConfig(model=check_params, n_buckets=40, seed=7, mode="gaussian-slice")


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ("OFFLAB_SEED", "OFFLAB_WORKERS", "OFFLAB_LOG_LEVEL", "OFFLAB_F_ADVISORY_MAX"):
        monkeypatch.delenv(name, raising=False)
