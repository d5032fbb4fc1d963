import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from phonontls.experiments import run_ringdown
from phonontls.hilbert import required_n_max
from phonontls.lindblad import weak_coupling_preset

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

WEAK_NBAR0 = (1.0, 2.0, 4.0, 8.0)
WEAK_TAUS = np.linspace(0.0, 50e-6, 51)


@pytest.fixture(scope="session")
def weak_ringdowns():
    """Weak-coupling ringdowns for each initial mean phonon number (minutes of CPU)."""
    out = {}
    for nb in WEAK_NBAR0:
        n_th = weak_coupling_preset().n_th
        alpha = float(np.sqrt(nb - n_th))
        cfg = weak_coupling_preset(n_max=required_n_max(alpha))
        out[nb] = run_ringdown(cfg, alpha, WEAK_TAUS)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
