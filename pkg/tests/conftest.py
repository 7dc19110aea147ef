import sys

import pytest
from nlsblowup.grid import GridSpec, PhysParams
from nlsblowup.groundstate import Kind, solve_ground_state

@pytest.fixture(scope="session")
def crit_params():
    return PhysParams(-1.0, 1.0, 4.0, 2.0, 1)


@pytest.fixture(scope="session")
def grid1d():
    return GridSpec(1, 48.0, 1024)


@pytest.fixture(scope="session")
def Q1(crit_params, grid1d):
    return solve_ground_state(Kind.CRITICAL, crit_params, grid1d)


@pytest.fixture(scope="session")
def super_params():
    return PhysParams(-1.0, 0.0, 6.0, 2.0, 1)


@pytest.fixture(scope="session")
def Q51(super_params):
    return solve_ground_state(Kind.FRAC, super_params, GridSpec(1, 64.0, 2048))


@pytest.fixture(scope="session")
def R52(super_params):
    return solve_ground_state(Kind.MIXED, super_params, GridSpec(1, 64.0, 2048))


@pytest.fixture(scope="session")
def blowup_run(Q1, crit_params):
    """Short threshold-family collapse: gradient grows fourfold."""
    from nlsblowup.evolution import StepperConfig, evolve
    from nlsblowup.groundstate import threshold_family

    u0 = threshold_family(Q1, 1.1, 3.0, GridSpec(1, 16.0, 2048))
    cfg = StepperConfig(dt_init=1e-3, snapshot_stride=20, grad_blowup_factor=4.0)
    return evolve(u0, crit_params, cfg, 1.0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
