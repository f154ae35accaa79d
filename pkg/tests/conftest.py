import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from acminmax.manifold import build_manifold
from acminmax.potential import Potential

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def quartic():
    return Potential.quartic()


@pytest.fixture(scope="session")
def torus64():
    return build_manifold("torus2", 64)


@pytest.fixture(scope="session")
def torus32():
    return build_manifold("torus2", 32)


@pytest.fixture(scope="session")
def sphere32():
    return build_manifold("sphere2", 32)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one verdict line per acceptance criterion, printed after the run
_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def criterion():
    def record(number, ok, detail):
        _ACCEPTANCE[number] = (bool(ok), detail)
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
