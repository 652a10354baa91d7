import math

import pytest

from merodyn.family import MapSpec, classify_regime
from merodyn.poincare import build_ps_measure
from merodyn.transfer import TreeConfig

HALF = MapSpec.tangent(0.5)
MISI = MapSpec.tangent(1j * math.pi)
TAN1 = MapSpec.tangent(1.0)


@pytest.fixture(scope="session")
def half():
    return HALF


@pytest.fixture(scope="session")
def misi():
    return MISI


@pytest.fixture(scope="session")
def misi_regime():
    return classify_regime(MISI)


@pytest.fixture(scope="session")
def half_regime():
    return classify_regime(HALF)


@pytest.fixture(scope="session")
def misi_measure():
    """s = 2.05, depth 8, res 0.02: about 10^4 atoms."""
    return build_ps_measure(MISI, 2.05, 8, TreeConfig(res=0.02))


@pytest.fixture(scope="session")
def misi_measure_fine():
    """Same at res 0.01: about twice the atoms."""
    return build_ps_measure(MISI, 2.05, 8, TreeConfig(res=0.01))


# (criterion number, line) pairs filled by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
