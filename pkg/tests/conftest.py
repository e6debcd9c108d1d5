import numpy as np
import pytest

from defacepipe import synthetic
from defacepipe.defacing import make_template_pack


@pytest.fixture(scope="session")
def head():
    return synthetic.nominal_head()


@pytest.fixture(scope="session")
def pack(head):
    return make_template_pack(head.volume)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
