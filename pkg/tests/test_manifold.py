import math

import numpy as np
import pytest

from equivar_nehari.errors import BallOverlapError, MeshError
from equivar_nehari.manifold import (BumpPair, Conformal, Ellipsoidal, SymmetricMesh, TensorField,
                                     build_builtin, check_involution, fast_marching,
                                     geodesic_distances, induced_metric, load_mesh, load_tensor,
                                     make_perturbation, normal_coordinates, parse_manifold_id,
                                     random_symmetric_tensor, save_mesh, save_tensor,
                                     symmetrize_tensor)

BUILTINS = ["sphere", "ellipsoid(1.0,1.1,1.2)", "torus(2,0.7)"]


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_icosphere_counts(k):
    mesh = build_builtin("sphere", k)
    assert mesh.n_vertices == 10 * 4**k + 2
    assert mesh.n_triangles == 20 * 4**k
    assert mesh.euler_characteristic() == 2
    assert mesh.is_closed_manifold()


def test_icosahedron_pairing():
    mesh = build_builtin("sphere", 0)
    assert (mesh.n_vertices, mesh.n_triangles) == (12, 20)
    assert np.array_equal(mesh.vertices[mesh.pairing], -mesh.vertices)


@pytest.mark.parametrize("manifold_id", BUILTINS)
@pytest.mark.parametrize("k", [1, 2])
def test_builtins_pass_involution_check(manifold_id, k):
    mesh = build_builtin(manifold_id, k)
    rep = check_involution(mesh)
    assert rep.passed and rep.n_violations == 0
    assert np.all(mesh.pairing != np.arange(mesh.n_vertices))
    assert np.array_equal(mesh.pairing[mesh.pairing], np.arange(mesh.n_vertices))
    assert mesh.euler_characteristic() == mesh.manifold.euler_characteristic
    assert mesh.is_closed_manifold()


def test_torus_grid():
    mesh = build_builtin("torus(R=2,r=0.7)", 2)
    assert mesh.euler_characteristic() == 0
    assert np.array_equal(mesh.vertices[mesh.pairing], -mesh.vertices)


def test_involution_failures():
    base = build_builtin("sphere", 1)
    shifted = SymmetricMesh.build(base.vertices + np.array([0.1, 0.0, 0.0]), base.triangles,
                                  base.pairing, base.manifold)
    rep = check_involution(shifted)
    assert not rep.passed
    assert len(rep.position_violations) == base.n_vertices
    ident = SymmetricMesh.build(base.vertices, base.triangles, np.arange(base.n_vertices),
                                base.manifold)
    rep = check_involution(ident)
    assert not rep.passed
    assert any("fixed vertices present" in m for m in rep.messages)


def test_unknown_manifold():
    with pytest.raises(MeshError):
        build_builtin("klein", 1)
    with pytest.raises(MeshError):
        parse_manifold_id("ellipsoid(1,2)")


def test_induced_metric_is_identity_frame(sphere2):
    g = induced_metric(sphere2)
    assert np.allclose(g.per_element, np.eye(2), atol=1e-14)
    assert g.is_symmetric_under(sphere2)
    # the local coordinates of paired elements agree exactly
    lc = sphere2.local_coords
    assert np.array_equal(lc, lc[sphere2.tri_pairing])


def test_flat_element_metric():
    # frames only need vertices and triangles, so a bare planar element suffices
    mesh = SymmetricMesh.__new__(SymmetricMesh)
    object.__setattr__(mesh, "vertices", np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]))
    object.__setattr__(mesh, "triangles", np.array([[0, 1, 2]]))
    f = mesh.frames[0]
    assert np.allclose(f.T @ f, np.eye(2))


@pytest.mark.parametrize("manifold_id", BUILTINS)
def test_tensor_symmetry_on_builtins(manifold_id):
    mesh = build_builtin(manifold_id, 2)
    assert induced_metric(mesh).is_symmetric_under(mesh, 1e-12)
    h = make_perturbation(mesh, Ellipsoidal((1.0, 1.05, 1.1)))
    assert h.is_symmetric_under(mesh, 1e-12)


def test_conformal_recipes(sphere2):
    zero = make_perturbation(sphere2, Conformal(0.0))
    assert np.all(zero.per_element == 0) and zero.k_proxy_norm == 0.0
    c = make_perturbation(sphere2, Conformal(0.3))
    assert np.allclose(c.per_element, 0.3 * np.eye(2), atol=1e-15)


def test_bump_pair_support(sphere3):
    q = int(np.argmax(sphere3.vertices[:, 2]))
    h = make_perturbation(sphere3, BumpPair(q, 0.5, "h12", 0.1))
    active = np.any(h.per_element != 0, axis=(1, 2))
    c = sphere3.centroids
    near = (np.linalg.norm(c - sphere3.vertices[q], axis=1) < 0.5) | \
           (np.linalg.norm(c + sphere3.vertices[q], axis=1) < 0.5)
    assert active.any() and not np.any(active & ~near)
    assert h.is_symmetric_under(sphere3)
    with pytest.raises(BallOverlapError):
        make_perturbation(sphere3, BumpPair(q, 1.2, "h12", 0.1))


def test_symmetrize(sphere2, rng):
    raw = rng.standard_normal((sphere2.n_triangles, 2, 2))
    raw = TensorField(raw + np.swapaxes(raw, 1, 2))
    s1 = symmetrize_tensor(sphere2, raw)
    assert s1.is_symmetric_under(sphere2, 0.0)
    s2 = symmetrize_tensor(sphere2, s1)
    assert np.array_equal(s1.per_element, s2.per_element)
    sym = random_symmetric_tensor(sphere2, rng)
    assert np.max(np.abs(symmetrize_tensor(sphere2, sym).per_element - sym.per_element)) <= 1e-14


def test_symmetrize_one_sided_field(sphere2):
    vals = np.zeros((sphere2.n_triangles, 2, 2))
    vals[3] = np.eye(2)
    out = symmetrize_tensor(sphere2, TensorField(vals)).per_element
    assert np.allclose(out[3], 0.5 * np.eye(2))
    assert np.allclose(out[sphere2.tri_pairing[3]], 0.5 * np.eye(2))


def test_metric_rejects_indefinite(sphere2):
    vals = np.tile(np.diag([1.0, -1.0]), (sphere2.n_triangles, 1, 1))
    with pytest.raises(MeshError):
        TensorField(vals, "metric")


def test_colatitude_distance(sphere3):
    q = int(np.argmax(sphere3.vertices[:, 2]))
    chart = normal_coordinates(sphere3, None, q, 1.2)
    z = sphere3.vertices[chart.vertices, 2]
    assert np.allclose(chart.distances, np.arccos(np.clip(z, -1, 1)), atol=1e-12)
    assert chart.distances[chart.vertices == q][0] == 0.0


def test_fast_marching_sphere_matches_great_circles(sphere3):
    g = induced_metric(sphere3)
    d = fast_marching(sphere3, g, 0)
    exact = geodesic_distances(sphere3, None, 0)
    assert d[0] == 0.0
    assert np.max(np.abs(d - exact)) < 0.05


def test_torus_outer_equator_distance():
    R, r = 2.0, 0.7
    mesh = build_builtin(f"torus({R},{r})", 3)
    x = mesh.vertices
    outer = np.nonzero(np.abs(np.linalg.norm(x[:, :2], axis=1) - (R + r)) < 1e-9)[0]
    src = int(outer[np.argmin(np.abs(np.arctan2(x[outer, 1], x[outer, 0])))])
    d = fast_marching(mesh, induced_metric(mesh), src)
    ang = np.abs(np.arctan2(x[outer, 1], x[outer, 0]))
    sel = (ang > 0.2) & (ang < 1.2)
    exact = ang[sel] * (R + r)
    assert np.max(np.abs(d[outer[sel]] - exact) / exact) <= 0.02


def test_distances_triangle_inequality(rng):
    mesh = build_builtin("ellipsoid(1.0,1.1,1.2)", 2)
    g = induced_metric(mesh)
    srcs = rng.choice(mesh.n_vertices, 6, replace=False)
    table = {int(s): fast_marching(mesh, g, int(s)) for s in srcs}
    for a in table:
        for b in table:
            assert table[a][b] == pytest.approx(table[b][a], rel=0.03, abs=1e-9)
            for c in table:
                assert table[a][c] <= table[a][b] + table[b][c] + 1e-9


def test_distances_respect_involution(sphere3):
    g = induced_metric(sphere3)
    d = fast_marching(sphere3, g, 5)
    dm = fast_marching(sphere3, g, int(sphere3.pairing[5]))
    assert np.allclose(d[sphere3.pairing], dm, atol=1e-12)


def test_ball_overlap(sphere3):
    with pytest.raises(BallOverlapError):
        normal_coordinates(sphere3, None, 0, math.pi / 2 + 0.01)


def test_mesh_and_tensor_files(tmp_path, sphere2, rng):
    save_mesh(sphere2, tmp_path / "s.off")
    back = load_mesh(tmp_path / "s.off", "sphere")
    assert np.array_equal(back.vertices, sphere2.vertices)
    assert np.array_equal(back.pairing, sphere2.pairing)
    assert check_involution(back).passed
    h = random_symmetric_tensor(sphere2, rng, 0.1)
    save_tensor(h, tmp_path / "h.txt")
    assert (tmp_path / "h.txt").read_text().startswith("# frame=")
    h2 = load_tensor(tmp_path / "h.txt", sphere2)
    assert np.array_equal(h2.per_element, h.per_element)
