import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from freezerid.model import DEFAULT_TRUTH
from freezerid.simulate import SimConfig, simulate_sde

settings.register_profile(
    "default", deadline=None, max_examples=50,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def short_sim():
    """Six hours of closed-loop data from the default truth."""
    return simulate_sde(DEFAULT_TRUTH, SimConfig(duration=360, seed=11))


@pytest.fixture(scope="session")
def day_sim():
    return simulate_sde(DEFAULT_TRUTH, SimConfig(duration=1440, seed=5))


@pytest.fixture(scope="session")
def recovery():
    """Predictive-recovery study shared by the acceptance and profile tests (~30 s)."""
    from freezerid.studies import recovery_study
    return recovery_study()


@pytest.fixture(scope="session")
def identifiability(recovery):
    """C_c profiles with all others free and with R_ce pinned (~3 min)."""
    from freezerid.studies import identifiability_study
    return identifiability_study(recovery)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
