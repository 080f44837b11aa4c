"""Gateaux derivatives of ``E``, ``G``, ``N`` and ``A`` in ``(eps, h)`` and their FD checks.

For a metric direction ``h`` the area element moves by
``d sqrt(det g) = 1/2 tr(g^-1 h) sqrt(det g)`` and the inverse metric by
``d g^-1 = -g^-1 h g^-1``.  The stiffness derivative is therefore the
contraction of the gradients with

    b~(h) = 1/2 tr(g^-1 h) g^-1 - g^-1 h g^-1,

the contravariant form of ``b(h) = 1/2 tr(g^-1 h) g - g^-1 h g^-1``.  The two
agree whenever ``g`` is the identity in the element frame, which is the case
for the induced metric.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .forms import (DIM, AssembledForms, ElementGeometry, _scatter, assemble,
                    mass_local, stiffness_local)
from .manifold import SymmetricMesh, TensorField


@dataclass(frozen=True)
class Direction:
    """Joint direction ``[d_eps, d_h]`` in parameter space."""

    d_eps: float
    d_h: TensorField | None = None

    def __add__(self, other: "Direction") -> "Direction":
        return Direction(self.d_eps + other.d_eps, _add_fields(self.d_h, other.d_h))

    def scaled(self, s: float) -> "Direction":
        return Direction(s * self.d_eps, None if self.d_h is None else self.d_h.scaled(s))

    def h_values(self, n_tri: int) -> np.ndarray:
        if self.d_h is None:
            return np.zeros((n_tri, 2, 2))
        return self.d_h.per_element


def _add_fields(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def b_tensor(g: TensorField, h: TensorField) -> TensorField:
    """``b(h) = 1/2 tr(g^-1 h) g - g^-1 h g^-1`` per element."""
    gm, hm = g.per_element, h.per_element
    ginv = np.linalg.inv(gm)
    tr = np.einsum("tij,tji->t", ginv, hm)
    b = 0.5 * tr[:, None, None] * gm - ginv @ hm @ ginv
    return TensorField(b, "perturbation")


def b_contravariant(ginv: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Pairing tensor ``b~`` used on covariant gradients."""
    tr = np.einsum("tij,tji->t", ginv, h)
    return 0.5 * tr[:, None, None] * ginv - ginv @ h @ ginv


@dataclass(frozen=True, eq=False)
class DerivativeOperators:
    """Sparse matrices of ``E'`` and ``G'`` plus the derivative of the nonlinear quadrature weights."""

    dE: sparse.csr_matrix
    dG: sparse.csr_matrix
    dq_weights: np.ndarray


def derivative_operators(forms: AssembledForms, direction: Direction) -> DerivativeOperators:
    """Assemble the derivative operators at ``(forms.eps, forms.metric)``."""
    mesh = forms.mesh
    geom: ElementGeometry = forms.geometry
    eps, n = forms.eps, DIM
    h = direction.h_values(mesh.n_triangles)
    de = float(direction.d_eps)
    tr = np.einsum("tij,tji->t", geom.ginv, h)
    darea = 0.5 * tr * geom.area
    # metric terms
    dK = _scatter(mesh, stiffness_local(geom, b_contravariant(geom.ginv, h)))
    dM = _scatter(mesh, mass_local(darea))
    # eps terms: E = eps^(2-n) K + eps^(-n) M in general dimension n
    dE = (eps ** (2 - n)) * dK + dM / eps**n \
        - (n * de / eps ** (n + 1)) * forms.M - ((n - 2) * de / eps ** (n - 1)) * forms.K
    dG = dM / eps**n - (n * de / eps ** (n + 1)) * forms.M
    quad = forms.quadrature
    dq = quad.weights(darea) / eps**n - (n * de / eps ** (n + 1)) * quad.weights(geom.area)
    return DerivativeOperators(dE.tocsr(), dG.tocsr(), dq)


def _forms(mesh, eps0, g, forms):
    return forms if forms is not None else assemble(mesh, g, eps0)


def dE(mesh: SymmetricMesh, eps0: float, g: TensorField, direction: Direction, u, v,
       forms: AssembledForms | None = None) -> float:
    ops = derivative_operators(_forms(mesh, eps0, g, forms), direction)
    return float(np.dot(u, ops.dE @ v))


def dG(mesh, eps0, g, direction, u, v, forms=None) -> float:
    ops = derivative_operators(_forms(mesh, eps0, g, forms), direction)
    return float(np.dot(u, ops.dG @ v))


def dN(mesh, eps0, g, direction, u, p, forms=None) -> float:
    forms = _forms(mesh, eps0, g, forms)
    ops = derivative_operators(forms, direction)
    return float(np.dot(ops.dq_weights, np.abs(forms.quadrature.sampler @ np.asarray(u, float)) ** p))


def dA(forms: AssembledForms, direction: Direction, u) -> np.ndarray:
    """Derivative of ``u -> A u`` from ``E(A'u, v) = G'(u, v) - E'(A u, v)``."""
    ops = derivative_operators(forms, direction)
    u = np.asarray(u, dtype=float)
    return forms.solve_E(ops.dG @ u - ops.dE @ forms.apply_A(u))


# ---------------------------------------------------------------------------
# finite-difference harness


@dataclass
class TermCheck:
    term: str
    analytic: float
    finite_difference: float
    rel_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.rel_error <= self.tol


def shifted(mesh: SymmetricMesh, eps0: float, g: TensorField, direction: Direction, t: float,
            quadrature: str = "lumped") -> AssembledForms:
    gm = g.per_element + t * direction.h_values(mesh.n_triangles)
    return assemble(mesh, TensorField(gm, "metric"), eps0 + t * direction.d_eps, quadrature)


def _step(eps0: float, direction: Direction) -> float:
    size = abs(direction.d_eps) / eps0
    if direction.d_h is not None:
        size = max(size, float(np.max(np.abs(direction.d_h.per_element))))
    return 1e-5 / max(size, 1e-300)


def _central(fun, t):
    return (fun(t) - fun(-t)) / (2 * t)


def _rich(fun, t):
    return (4 * _central(fun, t / 2) - _central(fun, t)) / 3


def _rel(a, b, scale):
    return abs(a - b) / max(abs(a), abs(b), scale)


def fd_check(mesh: SymmetricMesh, eps0: float, g: TensorField, direction: Direction,
             u, v, p: float, tol: float = 1e-5, quadrature: str = "lumped") -> list[TermCheck]:
    """Compare the analytic derivatives with central finite differences.

    Relative errors use the analytic magnitude as denominator, floored at
    ``1e-12`` times the matching product of norms.  A failing term is
    re-evaluated once with Richardson extrapolation.
    """
    forms = assemble(mesh, g, eps0, quadrature)
    ops = derivative_operators(forms, direction)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    t = _step(eps0, direction)
    cache: dict[float, AssembledForms] = {}

    def at(s):
        if s not in cache:
            cache[s] = shifted(mesh, eps0, g, direction, s, quadrature)
        return cache[s]

    nu, nv = forms.norm(u), forms.norm(v)
    scale2 = 1e-12 * nu * nv
    a_u = forms.apply_A(u)
    analytic = {
        "dE": float(u @ ops.dE @ v),
        "dG": float(u @ ops.dG @ v),
        "dN": float(ops.dq_weights @ np.abs(forms.quadrature.sampler @ u) ** p),
    }
    funs = {
        "dE": lambda s: at(s).E(u, v),
        "dG": lambda s: at(s).G(u, v),
        "dN": lambda s: at(s).N(u, p),
    }
    scales = {"dE": scale2, "dG": scale2, "dN": 1e-12 * forms.N(u, p)}
    out = []
    for name in ("dE", "dG", "dN"):
        fd = _central(funs[name], t)
        err = _rel(analytic[name], fd, scales[name])
        if err > tol:
            fd = _rich(funs[name], t)
            err = _rel(analytic[name], fd, scales[name])
        out.append(TermCheck(name, analytic[name], fd, err, tol))

    da = forms.solve_E(ops.dG @ u - ops.dE @ a_u)

    def fd_field(s):
        return (at(s).apply_A(u) - at(-s).apply_A(u)) / (2 * s)

    fd = fd_field(t)
    denom = max(forms.norm(da), 1e-12 * nu)
    err = forms.norm(da - fd) / denom
    if err > tol:
        fd = (4 * fd_field(t / 2) - fd) / 3
        err = forms.norm(da - fd) / denom
    out.append(TermCheck("dA", forms.norm(da), forms.norm(fd), err, tol))

    # consistency identity E'(Au, v) + E(A'u, v) = G'(u, v)
    lhs = float(a_u @ ops.dE @ v) + forms.E(da, v)
    rhs = float(u @ ops.dG @ v)
    ident_scale = max(abs(rhs), nu * nv * 1e-3)
    out.append(TermCheck("identity", lhs, rhs, abs(lhs - rhs) / ident_scale, 1e-10))
    return out
