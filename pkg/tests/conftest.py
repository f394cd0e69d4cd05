import numpy as np
import pytest

from urwkv import set_debug


@pytest.fixture(autouse=True, scope="session")
def _debug_mode():
    # every op output is NaN/Inf-checked throughout the suite
    set_debug(True)
    yield
    set_debug(False)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
