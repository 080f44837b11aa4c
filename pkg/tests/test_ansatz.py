import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from equivar_nehari.ansatz import (CUTOFF_SLOPE_CONSTANT, AnsatzParams, axis_vertices, cutoff,
                                   cutoff_derivative, default_radius, estimate_m_tau,
                                   fibonacci_directions, nehari_descent, nehari_project,
                                   nehari_scale, phi_ansatz, spread_vertices, transplant_bubble)
from equivar_nehari.errors import BallOverlapError, ZeroFieldError
from equivar_nehari.forms import assemble, is_equivariant
from equivar_nehari.ground_state import m_infinity
from equivar_nehari.manifold import Ellipsoidal, build_builtin, induced_metric, make_perturbation

P = 4.0


def test_nehari_scale_examples(sphere2):
    forms = assemble(sphere2, None, 0.3)
    rng = np.random.default_rng(0)
    u = rng.standard_normal(sphere2.n_vertices)
    on = nehari_project(forms, u, P)
    assert forms.E(on) == pytest.approx(forms.N(on, P), rel=1e-12)
    assert nehari_scale(forms, on, P) == pytest.approx(1.0, rel=1e-12)
    half = on / math.sqrt(2.0)  # E = 2 N
    assert forms.E(half) == pytest.approx(2 * forms.N(half, P), rel=1e-12)
    assert nehari_scale(forms, half, P) == pytest.approx(math.sqrt(2.0), rel=1e-12)
    with pytest.raises(ZeroFieldError):
        nehari_scale(forms, np.zeros(sphere2.n_vertices), P)


@settings(max_examples=30, deadline=None)
@given(s=st.floats(1e-3, 1e3), seed=st.integers(0, 10**6))
def test_nehari_scale_homogeneity(sphere2, s, seed):
    forms = assemble(sphere2, None, 0.3)
    u = np.random.default_rng(seed).standard_normal(sphere2.n_vertices)
    assert nehari_scale(forms, s * u, P) == pytest.approx(nehari_scale(forms, u, P) / s, rel=1e-12)


def test_cutoff_properties():
    R = 0.8
    t = np.linspace(0, 1.5 * R, 4001)
    chi = cutoff(t, R)
    assert np.all(chi[t <= R / 2] == 1.0) and np.all(chi[t >= R] == 0.0)
    assert np.all(np.diff(chi) <= 0)
    slope = np.max(np.abs(cutoff_derivative(t, R)))
    assert slope == pytest.approx(CUTOFF_SLOPE_CONSTANT / R, rel=1e-4)
    # derivative matches the function and vanishes at both ends of the transition
    fd = np.gradient(chi, t)
    assert np.max(np.abs(fd - cutoff_derivative(t, R))) < 1e-2
    assert cutoff_derivative(np.array([R / 2, R]), R).tolist() == [0.0, 0.0]


def test_default_radius(sphere3):
    q = axis_vertices(sphere3)[2]
    assert default_radius(sphere3, None, q) == pytest.approx(0.45 * math.pi)


def test_transplant_bubble(sphere3, profile2):
    q = axis_vertices(sphere3)[2]
    R = 0.9
    w = transplant_bubble(sphere3, None, AnsatzParams(0.2, R, q, profile2))
    assert w[q] == pytest.approx(profile2.u0, rel=1e-12)
    d = np.arccos(np.clip(sphere3.vertices @ sphere3.vertices[q], -1, 1))
    assert np.all(w[d >= R] == 0.0)
    assert not np.any((w != 0) & (w[sphere3.pairing] != 0))
    with pytest.raises(BallOverlapError):
        transplant_bubble(sphere3, None, AnsatzParams(0.2, 1.7, q, profile2))


def test_flat_limit_quadrature(sphere4, profile2):
    eps, R = 0.1, 0.5
    q = axis_vertices(sphere4)[2]
    w = transplant_bubble(sphere4, None, AnsatzParams(eps, R, q, profile2))
    forms = assemble(sphere4, None, eps, "lumped")
    flat = 2 * math.pi * quad(lambda r: r * float(profile2(r)) ** P, 0, profile2.r_max, limit=400)[0]
    assert forms.N(w, P) == pytest.approx(flat, rel=0.05)


def test_phi_equivariance(sphere3, profile2):
    forms = assemble(sphere3, None, 0.2)
    for q in spread_vertices(sphere3, 5):
        phi = phi_ansatz(sphere3, None, 0.2, q, profile2, P, forms=forms)
        assert is_equivariant(sphere3, phi)
        mirror = phi_ansatz(sphere3, None, 0.2, int(sphere3.pairing[q]), profile2, P, forms=forms)
        assert np.array_equal(mirror, -phi)
        # each signed bump sits on the Nehari set separately
        plus = np.maximum(phi, 0.0)
        assert forms.E(plus) == pytest.approx(forms.N(plus, P), rel=1e-10)


def test_phi_perturbed_equivariance(profile2):
    mesh = build_builtin("ellipsoid(1.0,1.1,1.2)", 3)
    g = induced_metric(mesh) + make_perturbation(mesh, Ellipsoidal((1.0, 1.02, 1.04)))
    phi = phi_ansatz(mesh, g, 0.2, 7, profile2, P)
    assert is_equivariant(mesh, phi)


def test_phi_energy_band(sphere4, profile2):
    eps = 0.1
    two_m = 2 * m_infinity(profile2)
    forms = assemble(sphere4, None, eps, "element")
    for q in spread_vertices(sphere4, 6):
        J = forms.J(phi_ansatz(sphere4, None, eps, q, profile2, P, forms=forms), P)
        assert 0.8 * two_m < J < 1.3 * two_m


def test_sample_points(sphere3):
    dirs = fibonacci_directions(9)
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0) and np.all(dirs[:, 2] > 0)
    pts = spread_vertices(sphere3, 12)
    assert len(pts) == 12
    classes = {min(v, int(sphere3.pairing[v])) for v in pts}
    assert len(classes) == 12
    assert spread_vertices(sphere3, 12) == pts
    torus = build_builtin("torus(2,0.7)", 2)
    tp = spread_vertices(torus, 6)
    assert len({min(v, int(torus.pairing[v])) for v in tp}) == 6


def test_descent_lowers_energy(sphere3, profile2):
    forms = assemble(sphere3, None, 0.3, "element")
    q = axis_vertices(sphere3)[2]
    start = phi_ansatz(sphere3, None, 0.3, q, profile2, P, forms=forms)
    res = nehari_descent(forms, start, P, max_iter=60)
    assert res.J_value <= forms.J(nehari_project(forms, start, P), P)
    assert abs(forms.E(res.u) - forms.N(res.u, P)) <= 1e-8 * forms.E(res.u)
    assert is_equivariant(sphere3, res.u)


def test_estimate_orbit_invariance_and_uniformity(sphere4, profile2):
    eps = 0.4
    est = estimate_m_tau(sphere4, None, eps, profile2, P, 4, details=True, quadrature="element",
                         max_iter=200)
    assert est.spread < 0.01
    g = induced_metric(sphere4) + make_perturbation(sphere4, Ellipsoidal.from_amplitude(0.05))
    pert = estimate_m_tau(sphere4, g, eps, profile2, P, 4, quadrature="element", max_iter=200)
    assert abs(pert - est.value) <= 0.1 * est.value
    with pytest.raises(ValueError):
        estimate_m_tau(sphere4, None, eps, profile2, P, 0)
