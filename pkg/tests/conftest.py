import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from phifno import _accel

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=["numpy", "numba"])
def backend(request):
    if request.param == "numba" and not _accel.HAVE_NUMBA:
        pytest.skip("numba not installed")
    previous = _accel.set_backend(request.param)
    yield request.param
    _accel.set_backend(previous)


@pytest.fixture(scope="session")
def tiny_dataset():
    from phifno.dataset import generate_ellipse_dataset

    return generate_ellipse_dataset(12, 16, 16, seed=3)
