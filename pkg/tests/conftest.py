import numpy as np
import pytest

from equivar_nehari.ground_state import solve_radial
from equivar_nehari.manifold import build_builtin, induced_metric


@pytest.fixture(scope="session")
def profile2():
    """Planar ground state for p = 4, shared by the surface tests."""
    return solve_radial(2, 4.0)


@pytest.fixture(scope="session")
def sphere2():
    return build_builtin("sphere", 2)


@pytest.fixture(scope="session")
def sphere3():
    return build_builtin("sphere", 3)


@pytest.fixture(scope="session")
def sphere4():
    return build_builtin("sphere", 4)


@pytest.fixture(scope="session")
def g_sphere2(sphere2):
    return induced_metric(sphere2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# ---------------------------------------------------------------------------
# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    def report(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
