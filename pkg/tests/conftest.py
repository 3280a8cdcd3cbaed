import numpy as np
import pytest

from predeso import scenario as sc
from predeso import sysmodel as sm


@pytest.fixture(scope="session")
def plant():
    return sc.example_plant()


@pytest.fixture(scope="session")
def plant0():
    return sc.example_plant(0.0)


@pytest.fixture(scope="session")
def topo():
    return sc.default_topology()


@pytest.fixture(scope="session")
def gains1(plant, topo):
    return sm.synthesize_gains_thm1(plant, topo=topo)


@pytest.fixture(scope="session")
def gains2(plant, topo):
    cfg = sc.preset("example2")
    return sm.synthesize_gains_thm2(plant, leader_bound=cfg.leader_bound(), topo=topo)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
