import pytest

from lifetime_ruin.fbp_dual import solve_dual
from lifetime_ruin.model import REFERENCE, Params
from lifetime_ruin.pde_primal import solve_primal

M_REF = 40.0

# acceptance results, filled by tests/test_acceptance.py
CRITERIA: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture(scope="session")
def prm():
    return Params.build(REFERENCE)


@pytest.fixture(scope="session")
def primal(prm):
    return solve_primal(prm, M_REF, 4001)


@pytest.fixture(scope="session")
def dual(prm):
    return solve_dual(prm, M_REF)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        name, ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {name}: {detail}")
