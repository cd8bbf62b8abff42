import numpy as np
import pytest

from kahan_cdc.models import LV1_U0, LV2_U0, build_lv1, build_lv2


@pytest.fixture(scope="session")
def lv1():
    return build_lv1()


@pytest.fixture(scope="session")
def lv2():
    return build_lv2()


@pytest.fixture(params=["lv1", "lv2"])
def model(request, lv1, lv2):
    return {"lv1": lv1, "lv2": lv2}[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def lv1_u0():
    return np.array(LV1_U0)


@pytest.fixture(scope="session")
def lv2_u0():
    return np.array(LV2_U0)
