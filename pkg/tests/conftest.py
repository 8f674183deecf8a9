import numpy as np
import pytest

from cbcfd.grid import BoundaryKind, Domain, build_grid

UNIT = Domain(0.0, 1.0, 0.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def unit_grid(nx, ny=None, bc=BoundaryKind.PERIODIC, domain=UNIT):
    return build_grid(domain, nx, nx if ny is None else ny, bc)


_CRITERIA: list = []


@pytest.fixture
def criterion():
    """Record the outcome of an acceptance criterion; returns ``passed``."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} | {detail}"
        _CRITERIA.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
