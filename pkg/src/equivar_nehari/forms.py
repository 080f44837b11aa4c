"""P1 finite-element forms for ``-eps^2 Lap_g u + u = |u|^(p-2) u`` on a surface.

With surface dimension ``n = 2`` the scaled inner products are

    E(u, v) = (1/eps^2) int (eps^2 <grad u, grad v>_g + u v) dmu_g = (K + M/eps^2)
    G(u, v) = (1/eps^2) int u v dmu_g                               = M/eps^2

with consistent P1 stiffness ``K`` and mass ``M``.  By default every
``|u|^(p-2) u`` term uses the lumped (vertex) mass, so the nonlinearity is
diagonal; an element quadrature of the P1 interpolant is available for
under-resolved peaks.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .errors import ConvergenceError, MeshError
from .manifold import SymmetricMesh, TensorField, induced_metric

DIM = 2
_REF_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


@dataclass(frozen=True, eq=False)
class ElementGeometry:
    """Per-element quantities of ``(mesh, g)`` needed by assembly and derivatives."""

    grads: np.ndarray      # (T, 3, 2) covariant gradients of the hat functions
    ginv: np.ndarray       # (T, 2, 2)
    area: np.ndarray       # (T,) metric area sqrt(det g) * |T|_frame

    @classmethod
    def of(cls, mesh: SymmetricMesh, g: TensorField) -> "ElementGeometry":
        y = mesh.local_coords
        d = np.stack([y[:, 1] - y[:, 0], y[:, 2] - y[:, 0]], axis=2)  # columns are edges
        det_d = d[:, 0, 0] * d[:, 1, 1] - d[:, 0, 1] * d[:, 1, 0]
        if np.any(det_d == 0):
            raise MeshError("degenerate (zero-area) triangle")
        dinv = np.linalg.inv(d)                    # rows: gradients of phi_1, phi_2
        grads = np.empty((len(y), 3, 2))
        grads[:, 1:] = dinv
        grads[:, 0] = -dinv.sum(axis=1)
        gm = g.per_element
        det_g = gm[:, 0, 0] * gm[:, 1, 1] - gm[:, 0, 1] * gm[:, 1, 0]
        if np.any(gm[:, 0, 0] <= 0) or np.any(det_g <= 0):
            raise MeshError("metric is not SPD on every element")
        ginv = np.linalg.inv(gm)
        area = 0.5 * np.abs(det_d) * np.sqrt(det_g)
        return cls(grads, ginv, area)


def _scatter(mesh: SymmetricMesh, local: np.ndarray) -> sparse.csr_matrix:
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    return sparse.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def stiffness_local(geom: ElementGeometry, tensor: np.ndarray | None = None) -> np.ndarray:
    """Element matrices ``area * grad_i^T B grad_j`` with ``B = g^-1`` by default."""
    b = geom.ginv if tensor is None else tensor
    return geom.area[:, None, None] * np.einsum("tki,tij,tlj->tkl", geom.grads, b, geom.grads)


def mass_local(weights: np.ndarray) -> np.ndarray:
    return weights[:, None, None] * _REF_MASS[None]


def lumped_mass(mesh: SymmetricMesh, weights: np.ndarray) -> np.ndarray:
    m = np.zeros(mesh.n_vertices)
    for k in range(3):
        np.add.at(m, mesh.triangles[:, k], weights / 3.0)
    return m


# Strang-Fix 7-point rule, exact for polynomials of degree 5, in barycentric form
_SF_A, _SF_B = 0.059715871789770, 0.470142064105115
_SF_C, _SF_D = 0.797426985353087, 0.101286507323456
_SF_POINTS = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_SF_A, _SF_B, _SF_B], [_SF_B, _SF_A, _SF_B], [_SF_B, _SF_B, _SF_A],
    [_SF_C, _SF_D, _SF_D], [_SF_D, _SF_C, _SF_D], [_SF_D, _SF_D, _SF_C],
])
_SF_WEIGHTS = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)
QUADRATURES = ("lumped", "element")


@dataclass(frozen=True, eq=False)
class NonlinearQuadrature:
    """Quadrature for ``int |u|^p``: point values ``sampler @ u`` with weights.

    ``contrib`` maps element areas to point weights, so that the weights and
    their metric derivatives are ``contrib @ area`` and ``contrib @ d area``.
    ``pairing`` matches each point with its mirror point.
    """

    kind: str
    sampler: sparse.csr_matrix
    contrib: sparse.csr_matrix
    pairing: np.ndarray

    @classmethod
    def build(cls, mesh: SymmetricMesh, kind: str = "lumped") -> "NonlinearQuadrature":
        nt, nv = mesh.n_triangles, mesh.n_vertices
        if kind == "lumped":
            t = mesh.triangles
            contrib = sparse.csr_matrix(
                (np.full(3 * nt, 1.0 / 3.0), (t.T.ravel(), np.tile(np.arange(nt), 3))), shape=(nv, nt))
            return cls(kind, sparse.identity(nv, format="csr"), contrib, mesh.pairing.copy())
        if kind != "element":
            raise ValueError(f"quadrature must be one of {QUADRATURES}")
        nq = len(_SF_WEIGHTS)
        pts = np.arange(nt * nq)
        elem = np.repeat(np.arange(nt), nq)
        sampler = sparse.csr_matrix(
            (np.tile(_SF_POINTS, (nt, 1)).ravel(), (np.repeat(pts, 3), mesh.triangles[elem].ravel())),
            shape=(nt * nq, nv))
        contrib = sparse.csr_matrix((np.tile(_SF_WEIGHTS, nt), (pts, elem)), shape=(nt * nq, nt))
        pairing = (mesh.tri_pairing[elem] * nq + np.tile(np.arange(nq), nt)).astype(np.int64)
        return cls(kind, sampler, contrib, pairing)

    def weights(self, area: np.ndarray) -> np.ndarray:
        w = self.contrib @ area
        return 0.5 * (w + w[self.pairing])


@dataclass(frozen=True, eq=False)
class AssembledForms:
    """Scaled forms on ``(mesh, g, eps)``; matrices are immutable after assembly."""

    mesh: SymmetricMesh
    metric: TensorField
    eps: float
    K: sparse.csr_matrix
    M: sparse.csr_matrix
    m_lumped: np.ndarray
    geometry: ElementGeometry = field(repr=False)
    quadrature: NonlinearQuadrature = field(repr=False, default=None)

    @property
    def E_matrix(self) -> sparse.csr_matrix:
        return self._E

    @property
    def G_matrix(self) -> sparse.csr_matrix:
        return self._G

    @cached_property
    def _E(self):
        return (self.K + self.M / self.eps**2).tocsr()

    @cached_property
    def _G(self):
        return (self.M / self.eps**2).tocsr()

    @cached_property
    def g_lumped(self) -> np.ndarray:
        """Diagonal of the lumped ``G``."""
        return self.m_lumped / self.eps**2

    @cached_property
    def q_weights(self) -> np.ndarray:
        """Scaled weights ``w / eps^2`` of the nonlinear quadrature."""
        return self.quadrature.weights(self.geometry.area) / self.eps**2

    # -- reduced (equivariant) operators --------------------------------

    @cached_property
    def E_reduced(self) -> sparse.csc_matrix:
        P = self.mesh.lift
        return (P.T @ self._E @ P).tocsc()

    @cached_property
    def G_reduced(self) -> sparse.csc_matrix:
        P = self.mesh.lift
        return (P.T @ self._G @ P).tocsc()

    @cached_property
    def sampler_reduced(self) -> sparse.csr_matrix:
        return (self.quadrature.sampler @ self.mesh.lift).tocsr()

    @cached_property
    def _lu_full(self):
        return spla.splu(self._E.tocsc())

    @cached_property
    def _lu_reduced(self):
        return spla.splu(self.E_reduced)

    # -- linear solves ----------------------------------------------------

    def solve_E(self, rhs: np.ndarray) -> np.ndarray:
        """``E^-1 rhs``; equivariant right-hand sides are solved in the reduced space."""
        rhs = np.asarray(rhs, dtype=float)
        if is_equivariant(self.mesh, rhs):
            reps = self.mesh.representatives
            w = self._refined(self._lu_reduced, self.E_reduced, 2.0 * rhs[reps])
            return self.mesh.from_reduced(w)
        return self._refined(self._lu_full, self._E, rhs)

    def solve_E_reduced(self, rhs: np.ndarray) -> np.ndarray:
        return self._refined(self._lu_reduced, self.E_reduced, rhs)

    @staticmethod
    def _refined(lu, mat, rhs, rtol=1e-12):
        x = lu.solve(rhs)
        scale = np.linalg.norm(rhs)
        if scale == 0:
            return x
        for _ in range(3):
            r = rhs - mat @ x
            if np.linalg.norm(r) <= rtol * scale:
                return x
            x = x + lu.solve(r)
        if np.linalg.norm(rhs - mat @ x) > 1e3 * rtol * scale:
            raise ConvergenceError("linear solve did not reach the requested residual")
        return x

    # -- forms and functionals --------------------------------------------

    def E(self, u, v=None) -> float:
        v = u if v is None else v
        return float(np.dot(u, self._E @ v))

    def G(self, u, v=None) -> float:
        v = u if v is None else v
        return float(np.dot(u, self._G @ v))

    def norm(self, u) -> float:
        """``H^1_eps`` norm, i.e. the ``E`` norm."""
        return float(np.sqrt(max(self.E(u), 0.0)))

    def N(self, u, p: float) -> float:
        uq = self.quadrature.sampler @ np.asarray(u, dtype=float)
        return float(np.dot(self.q_weights, np.abs(uq) ** p))

    def J(self, u, p: float) -> float:
        return 0.5 * self.E(u) - self.N(u, p) / p

    def apply_A(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if is_equivariant(self.mesh, f):
            w = self.mesh.to_reduced(f)
            return self.mesh.from_reduced(self.solve_E_reduced(self.G_reduced @ w))
        return self.solve_E(self._G @ f)

    @staticmethod
    def nonlinearity(u, p: float) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.abs(u) ** (p - 2) * u

    def load(self, u, p: float) -> np.ndarray:
        """Vector ``v -> (1/eps^2) int |u|^(p-2) u v`` under the nonlinear quadrature."""
        S = self.quadrature.sampler
        return S.T @ (self.q_weights * self.nonlinearity(S @ np.asarray(u, dtype=float), p))

    def load_reduced(self, w, p: float) -> np.ndarray:
        S = self.sampler_reduced
        return S.T @ (self.q_weights * self.nonlinearity(S @ w, p))

    def residual(self, u, p: float) -> np.ndarray:
        """``F(u) = u - A(|u|^(p-2) u)`` with the nonlinear quadrature in the load."""
        u = np.asarray(u, dtype=float)
        if is_equivariant(self.mesh, u):
            w = self.mesh.to_reduced(u)
            return self.mesh.from_reduced(self.residual_reduced(w, p))
        return u - self.solve_E(self.load(u, p))

    def residual_reduced(self, w, p: float) -> np.ndarray:
        return w - self.solve_E_reduced(self.load_reduced(w, p))

    def nonlinear_jacobian_reduced(self, w, p: float) -> sparse.csc_matrix:
        """``(p-1) (1/eps^2) int |u|^(p-2) phi_i phi_j`` in reduced DOFs."""
        S = self.sampler_reduced
        d = (p - 1.0) * self.q_weights * np.abs(S @ w) ** (p - 2.0)
        return (S.T @ sparse.diags(d) @ S).tocsc()

    def nonlinear_jacobian(self, u, p: float) -> sparse.csr_matrix:
        S = self.quadrature.sampler
        d = (p - 1.0) * self.q_weights * np.abs(S @ np.asarray(u, dtype=float)) ** (p - 2.0)
        return (S.T @ sparse.diags(d) @ S).tocsr()

    @property
    def area(self) -> float:
        return float(self.geometry.area.sum())


def assemble(mesh: SymmetricMesh, g: TensorField | None, eps: float,
             quadrature: str = "lumped") -> AssembledForms:
    """Assemble ``E`` and ``G`` for ``(mesh, g, eps)``; ``g=None`` means the induced metric.

    ``quadrature`` selects how ``int |u|^p`` and its derivatives are
    integrated: ``lumped`` (vertex weights, the default) or ``element``
    (7-point rule per triangle applied to the P1 interpolant).
    """
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    if g is None:
        g = induced_metric(mesh)
    if g.kind != "metric":
        raise MeshError("assemble needs a metric tensor field")
    geom = ElementGeometry.of(mesh, g)
    K = _scatter(mesh, stiffness_local(geom))
    K = 0.5 * (K + K.T)
    # exact zero row sums, so constants lie in the kernel of K to rounding
    K = K - sparse.diags(np.asarray(K.sum(axis=1)).ravel())
    M = _scatter(mesh, mass_local(geom.area))
    M = 0.5 * (M + M.T)
    # paired entries are sums over paired elements taken in different orders;
    # averaging with the mirrored matrix makes S-commutation exact
    S = abs(mesh.signed_involution)
    K = 0.5 * (K + S @ K @ S)
    M = 0.5 * (M + S @ M @ S)
    m = lumped_mass(mesh, geom.area)
    m = 0.5 * (m + m[mesh.pairing])
    quad = _quadrature_for(mesh, quadrature)
    return AssembledForms(mesh, g, float(eps), K.tocsr(), M.tocsr(), m, geom, quad)


_QUAD_CACHE: "OrderedDict[tuple, tuple]" = OrderedDict()


def _quadrature_for(mesh, kind):
    key = (id(mesh), kind)
    hit = _QUAD_CACHE.get(key)
    if hit is not None and hit[0] is mesh:
        return hit[1]
    quad = NonlinearQuadrature.build(mesh, kind)
    _QUAD_CACHE[key] = (mesh, quad)
    while len(_QUAD_CACHE) > 8:
        _QUAD_CACHE.popitem(last=False)
    return quad


# ---------------------------------------------------------------------------
# functional interface on (mesh, g, eps)

_CACHE: "OrderedDict[tuple, tuple]" = OrderedDict()


def forms_for(mesh: SymmetricMesh, g: TensorField | None, eps: float,
              quadrature: str = "lumped") -> AssembledForms:
    """Memoised :func:`assemble` keyed on object identity."""
    key = (id(mesh), id(g), float(eps), quadrature)
    hit = _CACHE.get(key)
    if hit is not None and hit[0] is mesh and hit[1] is g:
        _CACHE.move_to_end(key)
        return hit[2]
    forms = assemble(mesh, g, eps, quadrature)
    _CACHE[key] = (mesh, g, forms)
    while len(_CACHE) > 8:
        _CACHE.popitem(last=False)
    return forms


def N_functional(mesh, g, eps, u, p) -> float:
    """Lumped ``(1/eps^2) int |u|^p dmu_g``; use ``AssembledForms.N`` for other quadratures."""
    return forms_for(mesh, g, eps).N(u, p)


def J_energy(mesh, g, eps, u, p) -> float:
    return forms_for(mesh, g, eps).J(u, p)


def residual_F(mesh, g, eps, u, p) -> np.ndarray:
    return forms_for(mesh, g, eps).residual(u, p)


def apply_A(forms: AssembledForms, f) -> np.ndarray:
    """``a = E^-1 G f``, so that ``E(a, v) = G(f, v)`` for every ``v``."""
    return forms.apply_A(f)


# ---------------------------------------------------------------------------
# equivariance helpers


def project_equivariant(mesh: SymmetricMesh, u) -> np.ndarray:
    """``(u - u o sigma) / 2``, the odd part under the involution."""
    u = np.asarray(u, dtype=float)
    out = 0.5 * (u - u[mesh.pairing])
    # the same arithmetic on both halves; mirror once more for exactness
    reps = mesh.representatives
    out[mesh.pairing[reps]] = -out[reps]
    return out


def is_equivariant(mesh: SymmetricMesh, u) -> bool:
    u = np.asarray(u)
    return bool(np.array_equal(u[mesh.pairing], -u))


def equivariance_defect(mesh: SymmetricMesh, u) -> float:
    u = np.asarray(u)
    return float(np.max(np.abs(u[mesh.pairing] + u), initial=0.0))


def commutation_norms(forms: AssembledForms) -> tuple[float, float]:
    """Max-entry norms of ``S E - E S`` and ``S G - G S``."""
    S = forms.mesh.signed_involution
    out = []
    for A in (forms.E_matrix, forms.G_matrix):
        d = (S @ A - A @ S).tocoo()
        out.append(float(np.max(np.abs(d.data), initial=0.0)))
    return out[0], out[1]


def save_field(u, path) -> None:
    u = np.asarray(u)
    Path(path).write_text("".join(f"{i} {x:.17g}\n" for i, x in enumerate(u)))


def load_field(path) -> np.ndarray:
    rows = np.loadtxt(path, ndmin=2)
    out = np.empty(len(rows))
    out[rows[:, 0].astype(int)] = rows[:, 1]
    return out
