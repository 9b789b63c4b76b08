import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from flatjet.jets import Jet, enumerate_multiindices

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@st.composite
def jets(draw, n=None, degree=None, scale=3.0, basepoint=None):
    """Random jets with bounded coefficients."""
    n = draw(st.integers(1, 3)) if n is None else n
    degree = draw(st.integers(0, 4)) if degree is None else degree
    if basepoint is None:
        basepoint = draw(st.lists(st.floats(-2, 2), min_size=n, max_size=n))
    coeffs = {
        a: draw(st.floats(-scale, scale))
        for a in enumerate_multiindices(n, degree)
    }
    return Jet(tuple(basepoint), degree, coeffs)


def random_jet(rng, n, degree, basepoint=None, scale=1.0):
    idx = enumerate_multiindices(n, degree)
    x0 = rng.uniform(-1, 1, n) if basepoint is None else basepoint
    return Jet(tuple(x0), degree, dict(zip(idx, rng.normal(0, scale, len(idx)))))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
