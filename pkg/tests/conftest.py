import os
from pathlib import Path
import sys

from hypothesis import settings as hypothesis_settings
import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
for rel in ("libs/skpd_mcca", "services/cli"):
    path = str(ROOT / rel)
    if path not in sys.path:
        sys.path.insert(0, path)

np.seterr(all="warn")

hypothesis_settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis_settings.register_profile("thorough", max_examples=100, deadline=None)
hypothesis_settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "fast"))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-size reproduction runs (SKPD_RUN_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if os.getenv("SKPD_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set SKPD_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def make_raw_dataset(n=60, dims=(8, 8), q=6, seed=0):
    """Small correlated (image, genetics, outcome) triple for solver tests."""

    from skpd_mcca.mcca import Dataset

    rng = np.random.default_rng(seed)
    latent = rng.standard_normal(n)
    images = 0.5 * rng.standard_normal((n, *dims))
    images[:, : dims[0] // 2, : dims[1] // 2] += latent[:, None, None]
    genetics = rng.standard_normal((n, q))
    genetics[:, 0] += latent
    outcome = latent + 0.5 * rng.standard_normal(n)
    return Dataset(images=images, genetics=genetics, outcome=outcome)


@pytest.fixture
def raw_dataset():
    return make_raw_dataset()


@pytest.fixture
def dataset(raw_dataset):
    from skpd_mcca.mcca import preprocess

    return preprocess(raw_dataset)


@pytest.fixture
def small_sim_config():
    from skpd_mcca.simgen import SimConfig

    return SimConfig(n=200, image_dims=(16, 16), q=20, rho1=0.8, rho2=0.6, seed=3)
