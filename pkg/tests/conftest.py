import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

settings.register_profile(
    "rotensemble", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("rotensemble")


def _unit(v):
    return v / np.linalg.norm(v)


# 4-vectors bounded away from the origin, normalized
unit_quats = arrays(
    np.float64, 4, elements=st.floats(-1.0, 1.0, allow_nan=False, allow_subnormal=False)
).filter(lambda v: np.linalg.norm(v) > 0.1).map(_unit)

angles = st.floats(-2 * np.pi, 2 * np.pi, allow_nan=False, allow_subnormal=False)


@pytest.fixture
def rng():
    from rotensemble.so3 import make_rng

    return make_rng(20240611)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[str, str] = {}


def pytest_configure(config):
    import os
    from pathlib import Path

    # trained acceptance models are cached next to the repository, whatever the working directory
    os.environ.setdefault("ROTENSEMBLE_CACHE", str(Path(__file__).resolve().parent.parent / ".cache" / "acceptance"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=int):
        terminalreporter.write_line(ACCEPTANCE[key])
