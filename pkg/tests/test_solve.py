import numpy as np
import pytest

from equivar_nehari.ansatz import axis_vertices, phi_ansatz, spread_vertices
from equivar_nehari.errors import ZeroFieldError
from equivar_nehari.forms import assemble, is_equivariant
from equivar_nehari.ground_state import m_infinity
from equivar_nehari.manifold import build_builtin
from equivar_nehari.solve import (SpectrumReport, barycenter, cluster_records, deflated_search,
                                  linearized_spectrum, nehari_rayleigh, newton_solve, nodal_domains,
                                  records_csv)

P = 4.0


@pytest.fixture(scope="module")
def round_solution(sphere4, profile2):
    """Converged antipodal-pair solution on the round sphere at eps = 0.1."""
    forms = assemble(sphere4, None, 0.1, "element")
    q = axis_vertices(sphere4)[2]
    start = phi_ansatz(sphere4, None, 0.1, q, profile2, P, forms=forms)
    return forms, start, newton_solve(forms, start, P, tol=1e-9)


def test_nodal_domain_examples(sphere3):
    x, y, z = sphere3.vertices.T
    assert nodal_domains(sphere3, z) == 2
    assert nodal_domains(sphere3, x * y) == 4
    assert nodal_domains(sphere3, np.ones(sphere3.n_vertices)) == 1
    assert nodal_domains(sphere3, np.zeros(sphere3.n_vertices)) == 0


def test_barycenter_examples(sphere3):
    u = np.zeros(sphere3.n_vertices)
    u[11] = 2.0
    assert np.allclose(barycenter(sphere3, None, u, P), sphere3.vertices[11], atol=1e-15)
    c = np.full(sphere3.n_vertices, 0.5)
    assert np.linalg.norm(barycenter(sphere3, None, c, P)) <= 1e-14
    with pytest.raises(ZeroFieldError):
        barycenter(sphere3, None, -c, P)


def test_barycenter_mirror(sphere3, profile2):
    phi = phi_ansatz(sphere3, None, 0.3, 5, profile2, P)
    b_plus, b_minus = barycenter(sphere3, None, phi, P), barycenter(sphere3, None, -phi, P)
    assert np.allclose(b_minus, -b_plus, atol=1e-14)


def test_newton_trivial_start(sphere3):
    forms = assemble(sphere3, None, 0.2)
    rec = newton_solve(forms, np.zeros(sphere3.n_vertices), P)
    assert rec.converged and rec.iterations == 0 and rec.is_trivial


def test_newton_from_phi(round_solution, profile2):
    forms, _, rec = round_solution
    assert rec.converged and rec.residual_norm <= 1e-9
    assert rec.nodal_domains == 2
    two_m = 2 * m_infinity(profile2)
    assert abs(rec.J_value - two_m) < 0.15 * two_m
    assert is_equivariant(forms.mesh, rec.u)
    # the solution is a fixed point and the residual matches F
    again = newton_solve(forms, rec.u, P, tol=1e-9)
    assert again.converged and again.iterations <= 1
    assert forms.norm(forms.residual(rec.u, P)) <= 1e-9


def test_newton_pairing(round_solution):
    forms, start, rec = round_solution
    neg = newton_solve(forms, -start, P, tol=1e-9)
    assert np.array_equal(neg.u, -rec.u)
    assert neg.J_value == rec.J_value
    s1 = linearized_spectrum(forms, rec.u, P, 6)
    s2 = linearized_spectrum(forms, neg.u, P, 6)
    assert np.array_equal(s1.eigenvalues, s2.eigenvalues)


def test_spectrum_trivial(sphere2):
    forms = assemble(sphere2, None, 0.3)
    rep = linearized_spectrum(forms, np.zeros(sphere2.n_vertices), P, 5)
    assert np.all(rep.eigenvalues == 1.0)
    assert rep.kernel_dim_estimate == 0 and rep.morse_index == 0


def test_spectrum_report_consistency():
    rep = SpectrumReport.from_values([0.5, -0.2, 1e-6, -3.0, 2.0], 1e-3)
    assert list(np.abs(rep.eigenvalues)) == sorted(np.abs(rep.eigenvalues))
    assert rep.kernel_dim_estimate == 1 and rep.morse_index == 2
    assert rep.margin == pytest.approx(1e-6)
    absolute = SpectrumReport.from_values([0.5, 1e-4], 1e-3, relative=False)
    assert absolute.kernel_dim_estimate == 1


def test_nehari_direction_is_negative(round_solution):
    forms, _, rec = round_solution
    assert nehari_rayleigh(forms, rec.u, P) == pytest.approx(2 - P, rel=1e-6)
    # the Nehari eigenvalue has the largest modulus, so ask for the whole reduced spectrum
    full = linearized_spectrum(forms, rec.u, P, forms.mesh.n_vertices // 2, relative=False)
    assert full.morse_index >= 1 and full.eigenvalues.min() < 0


def test_search_pairs_mirror_starts(round_solution, sphere4, profile2):
    forms, start, _ = round_solution
    q = axis_vertices(sphere4)[2]
    mirror = phi_ansatz(sphere4, None, 0.1, int(sphere4.pairing[q]), profile2, P, forms=forms)
    res = deflated_search(forms, [start, mirror], P)
    assert len(res.pairs) == 1 and res.rejected == 0


def test_search_round_sphere_single_level(sphere4, profile2):
    forms = assemble(sphere4, None, 0.1, "element")
    starts = [phi_ansatz(sphere4, None, 0.1, v, profile2, P, forms=forms)
              for v in spread_vertices(sphere4, 20)]
    res = deflated_search(forms, starts, P)
    assert len(res.pairs) >= 2 and res.orbit_degenerate
    # the mesh pins peaks to vertices, which splits the rotation orbit by about 1% in J
    _, levels = cluster_records(forms, res.pairs, j_rtol=0.02)
    assert len(levels) == 1


def test_search_ellipsoid_axis_pairs(profile2):
    mesh = build_builtin("ellipsoid(1.0,1.1,1.2)", 4)
    forms = assemble(mesh, None, 0.1, "element")
    axes = axis_vertices(mesh)
    ends = axes + [int(mesh.pairing[v]) for v in axes]
    res = deflated_search(forms, [phi_ansatz(mesh, None, 0.1, v, profile2, P, forms=forms) for v in ends], P)
    assert len(res.pairs) == 3
    J = sorted(r.J_value for r in res.pairs)
    assert J[0] < J[1] < J[2]
    assert all(r.nodal_domains == 2 for r in res.pairs)


def test_record_export(round_solution):
    forms, _, rec = round_solution
    rec.spectrum = linearized_spectrum(forms, rec.u, P, 8)
    block = rec.text_block()
    assert "nodal domains  2" in block and "eigenvalues" in block
    text = records_csv([rec])
    header, row = text.strip().splitlines()
    assert header.split(",")[:3] == ["start", "eps", "metric"]
    assert len(row.split(",")) == len(header.split(","))
