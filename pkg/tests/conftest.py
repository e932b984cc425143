import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from scbf.spectral import GridSpec, SpectralField

settings.register_profile("scbf", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("scbf")


@pytest.fixture(scope="session")
def grid():
    return GridSpec(32)


@pytest.fixture(scope="session")
def small_grid():
    return GridSpec(16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_fields(grid, rng, count, norm=1.0):
    """``count`` random divergence-free fields with H norm ``norm``."""
    out = []
    for _ in range(count):
        uh = grid.random_coeffs(rng)
        out.append(SpectralField(grid, uh * (norm / grid.norm_h(uh))))
    return out


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one verdict line per acceptance criterion for the terminal summary."""

    def log(label, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return log


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
