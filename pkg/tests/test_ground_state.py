import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from equivar_nehari.errors import ExponentRangeError
from equivar_nehari.ground_state import (eval_bubble, load_profile, m_infinity, m_infinity_refined,
                                         radial_residual, save_profile, solve_radial)

# Frozen values from scripts/oracle_ground_state.py (fixed-step RK4 shooting at
# three step sizes with Richardson extrapolation, independent of the package).
ORACLE_U0_N3_P4 = 4.337387680044
ORACLE_MINF_N2_P4 = 5.850448262280


@pytest.fixture(scope="module")
def soliton():
    return solve_radial(1, 4.0, tol=1e-8)


def test_one_dimensional_soliton_p4(soliton):
    r = soliton.r_grid
    exact = math.sqrt(2.0) / np.cosh(r)
    assert np.max(np.abs(soliton.u_values - exact)) <= 1e-6
    assert soliton.u0 == pytest.approx(math.sqrt(2.0), abs=1e-7)
    fine = np.linspace(0.0, 12.0, 3001)
    assert np.max(np.abs(soliton(fine) - math.sqrt(2.0) / np.cosh(fine))) <= 1e-6


def test_one_dimensional_soliton_p3():
    prof = solve_radial(1, 3.0, tol=1e-8)
    r = prof.r_grid
    assert prof.u0 == pytest.approx(1.5, abs=1e-7)
    assert np.max(np.abs(prof.u_values - 1.5 / np.cosh(r / 2) ** 2)) <= 1e-6


def test_m_infinity_closed_forms(soliton):
    assert m_infinity(soliton) == pytest.approx(4.0 / 3.0, abs=1e-6)
    # (1/6) * 2 * (27/8) * int_0^inf sech^6(r/2) dr = (27/24) * (16/15) = 6/5
    assert m_infinity(solve_radial(1, 3.0)) == pytest.approx(1.2, abs=1e-6)


def test_oracle_regression_values():
    assert solve_radial(3, 4.0).u0 == pytest.approx(ORACLE_U0_N3_P4, abs=1e-8)
    assert m_infinity(solve_radial(2, 4.0)) == pytest.approx(ORACLE_MINF_N2_P4, rel=1e-9)


def test_runtime_one_dimensional():
    t0 = time.perf_counter()
    solve_radial(1, 4.0, tol=1e-8)
    assert time.perf_counter() - t0 < 1.0


@pytest.mark.parametrize("n,p", [(1, 4.0), (2, 3.0), (2, 4.0), (3, 3.0), (3, 4.0)])
def test_profile_shape_and_residual(n, p):
    prof = solve_radial(n, p, tol=1e-8)
    assert np.all(prof.u_values > 0)
    assert np.all(np.diff(prof.u_values) < 0)
    assert np.max(np.abs(radial_residual(prof))) <= 1e-8 * max(1.0, prof.u0 ** (p - 1))
    assert prof.u_values[-1] < 1e-8 * prof.u0


def test_exponential_decay_slope(profile2):
    r, u = profile2.r_grid, profile2.u_values
    last = r >= r[-1] - 10.0
    slope = np.polyfit(r[last], np.log(u[last]), 1)[0]
    assert -1.2 <= slope <= -0.8


def test_m_infinity_grid_invariance(profile2):
    base = m_infinity(profile2)
    assert abs(m_infinity_refined(profile2, 2) - base) <= 1e-10 * base


def test_eval_bubble_examples(soliton):
    assert eval_bubble(soliton, 1.0, 0.0) == pytest.approx(math.sqrt(2.0), abs=1e-9)
    assert eval_bubble(soliton, 0.5, 0.5) == pytest.approx(math.sqrt(2.0) / math.cosh(1.0), abs=1e-6)
    assert eval_bubble(soliton, 0.1, 0.1 * soliton.r_max * 1.01) == 0.0


@settings(max_examples=40, deadline=None)
@given(eps=st.floats(0.05, 1.0), r=st.floats(0.0, 3.0))
def test_eval_bubble_is_rescaled_profile(soliton, eps, r):
    assert eval_bubble(soliton, eps, r) == pytest.approx(float(soliton(r / eps)), abs=1e-15)


@pytest.mark.parametrize("n,p", [(1, 2.0), (2, 2.0), (3, 6.0), (3, 7.5), (4, 3.0)])
def test_exponent_range(n, p):
    with pytest.raises(ExponentRangeError):
        solve_radial(n, p)


def test_export_round_trip(tmp_path, profile2):
    path = tmp_path / "u.txt"
    save_profile(profile2, path)
    header = path.read_text().splitlines()[0]
    assert header.startswith("# n=2 p=4")
    back = load_profile(path)
    assert back.n == 2 and back.p == 4.0
    assert np.allclose(back.r_grid, profile2.r_grid, rtol=0, atol=1e-15)
    assert m_infinity(back) == pytest.approx(m_infinity(profile2), rel=1e-12)
