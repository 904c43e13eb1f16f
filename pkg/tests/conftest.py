import numpy as np
import pytest

from ebmrec.energy import Architecture, init_params
from ebmrec.numerics import RandomStream


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_arch():
    # two downsampling stages like the full model, just narrow
    return Architecture(widths=(8, 12, 16), blocks=(1, 1, 1), conditional=True)


@pytest.fixture
def tiny_params(tiny_arch):
    return init_params(tiny_arch, RandomStream(7))


def rel_err(a, b, floor=1e-10):
    return abs(a - b) / max(abs(a), abs(b), floor)
