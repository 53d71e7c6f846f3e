"""Shared desk-scale runs and the acceptance summary hook."""

import numpy as np
import pytest

from arwimcf.background import ArwParams, make_canonical, make_perturbed
from arwimcf.flow import FlowConfig, InitialData, Mode, run
from arwimcf.geometry import SpatialDomain

PERTURBATION = (Mode(0.05, (1, 0)),)


def flow_config(n=2, omega=2.0, m=1.0, N=64, modes=PERTURBATION, t_end=12.0, amplitude=0.0,
                beta=0.0, constant=-0.5, **kw):
    params = ArwParams(n, omega, m)
    sf = make_canonical(params)
    if amplitude:
        sf = make_perturbed(sf, amplitude)
    return FlowConfig(params, sf, SpatialDomain(n, N, beta=beta), InitialData(constant, modes),
                      t_end=t_end, **kw)


@pytest.fixture(scope="session")
def homogeneous_run():
    """Canonical n=2, omega=2, m=1 background; u0 = -0.5; 64^2; t_end = 12."""
    return run(flow_config(modes=()))


@pytest.fixture(scope="session")
def perturbed_run():
    """Same background; u0 = -0.5 + 0.05 cos x1."""
    return run(flow_config())


@pytest.fixture(scope="session")
def omega3_run():
    """n=2, omega=3 (n + omega - 4 > 0) perturbed run to t = 14."""
    return run(flow_config(omega=3.0, t_end=14.0))


@pytest.fixture(scope="session")
def omega4_homogeneous_run():
    """gamma_tilde = 2 homogeneous run deciding the limit-metric constant."""
    return run(flow_config(omega=4.0, modes=()))


@pytest.fixture(scope="session")
def perturbed_background_run():
    """Perturbed scale factor (A = 0.1) and time-dependent sigma (beta = 0.1)."""
    return run(flow_config(amplitude=0.1, beta=0.1))


class AcceptanceLog:
    def __init__(self, config):
        self._lines = config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(self, criterion, name, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} [criterion {criterion}] {name}: {detail}"
        self._lines.append(line)
        print(line)
        return passed


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance(request):
    return AcceptanceLog(request.config)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
