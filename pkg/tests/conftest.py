import numpy as np
import pytest
from hypothesis import settings

from pairbridge.schedules import bridge_gmax, bridge_vp, constant_g

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

SCHEDULES = {
    "gmax": bridge_gmax(),
    "vp": bridge_vp(),
    "constant": constant_g(),
}


@pytest.fixture(params=sorted(SCHEDULES))
def schedule(request):
    return SCHEDULES[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
