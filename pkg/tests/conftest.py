import numpy as np
import pytest

from opalg.fixtures import all_fixtures, invariant_subalgebras, rotation

ACCEPTANCE: dict[int, tuple[str, bool]] = {}


@pytest.fixture(scope="session")
def fixtures():
    return all_fixtures()


@pytest.fixture(scope="session")
def fixture_qs(fixtures):
    """(fixture name, Q name, system, Q) for every invariant Q we exercise."""
    out = []
    for name, S in fixtures.items():
        for qname, Q in invariant_subalgebras(S).items():
            out.append((name, qname, S, Q))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture(scope="session")
def rotations():
    return {n: rotation(n) for n in (2, 3, 4, 5)}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {name}")
