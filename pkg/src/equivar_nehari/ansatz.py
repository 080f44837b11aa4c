"""Nehari projection, transplanted bubbles and the antisymmetric two-bubble ansatz."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BallOverlapError, ConvergenceError, ZeroFieldError
from .forms import AssembledForms, forms_for
from .ground_state import RadialProfile
from .manifold import SymmetricMesh, TensorField, antipodal_distance, normal_coordinates

R_FRACTION = 0.45


def nehari_scale(forms: AssembledForms, u, p: float) -> float:
    """Maximiser ``t = (E(u,u)/N(u))^(1/(p-2))`` of ``s -> J(s u)``."""
    n = forms.N(u, p)
    if n == 0.0:
        raise ZeroFieldError("nehari_scale needs a nonzero field")
    return (forms.E(u) / n) ** (1.0 / (p - 2.0))


def nehari_project(forms: AssembledForms, u, p: float) -> np.ndarray:
    return nehari_scale(forms, u, p) * np.asarray(u, dtype=float)


def cutoff(t, R: float):
    """Quintic smoothstep cutoff: 1 on ``[0, R/2]``, 0 on ``[R, inf)``, C^2 in between."""
    t = np.asarray(t, dtype=float)
    x = np.clip((t - 0.5 * R) / (0.5 * R), 0.0, 1.0)
    return 1.0 - x**3 * (10.0 - 15.0 * x + 6.0 * x * x)


def cutoff_derivative(t, R: float):
    t = np.asarray(t, dtype=float)
    x = np.clip((t - 0.5 * R) / (0.5 * R), 0.0, 1.0)
    return -30.0 * x * x * (1.0 - x) ** 2 / (0.5 * R)


#: ``max |chi_R'| * R``; any C^1 cutoff dropping from 1 to 0 on ``[R/2, R]``
#: has ``max |chi'| >= 2/R`` by the mean value theorem.
CUTOFF_SLOPE_CONSTANT = 3.75


@dataclass
class AnsatzParams:
    eps: float
    R: float
    q: int
    profile: RadialProfile = field(repr=False)


def default_radius(mesh: SymmetricMesh, g: TensorField | None, q: int,
                   mirror_distance: float | None = None) -> float:
    if mirror_distance is None:
        mirror_distance = antipodal_distance(mesh, g, q)
    return R_FRACTION * min(mirror_distance, mesh.manifold.injectivity_estimate)


def transplant_bubble(mesh: SymmetricMesh, g: TensorField | None, params: AnsatzParams,
                      mirror_distance: float | None = None) -> np.ndarray:
    """``W(x) = U(d(q, x)/eps) chi_R(d(q, x))`` on the geodesic ball ``B(q, R)``, zero elsewhere."""
    chart = normal_coordinates(mesh, g, params.q, params.R, mirror_distance)
    w = np.zeros(mesh.n_vertices)
    d = chart.distances
    w[chart.vertices] = params.profile(d / params.eps) * cutoff(d, params.R)
    if np.any(w[mesh.pairing[chart.vertices]] != 0.0):
        raise BallOverlapError("bubble support meets its mirror image")
    return w


def phi_ansatz(mesh: SymmetricMesh, g: TensorField | None, eps: float, q: int,
               profile: RadialProfile, p: float, R: float | None = None,
               forms: AssembledForms | None = None) -> np.ndarray:
    """Antisymmetric two-bubble field ``t(W_q) W_q - t(W_-q) W_-q``.

    The mirrored bubble is the pull-back ``W_q o sigma``, which is the bubble
    at ``sigma(q)`` for any symmetric metric.  For an image vertex the field is
    built at its partner and negated, so ``phi(sigma q) = -phi(q)`` holds
    exactly.
    """
    q = int(q)
    partner = int(mesh.pairing[q])
    if partner < q:
        return -phi_ansatz(mesh, g, eps, partner, profile, p, R, forms)
    mirror = antipodal_distance(mesh, g, q)
    if R is None:
        R = default_radius(mesh, g, q, mirror)
    w = transplant_bubble(mesh, g, AnsatzParams(eps, R, q, profile), mirror)
    if forms is None:
        forms = forms_for(mesh, g, eps)
    t = nehari_scale(forms, w, p)
    u = t * w
    return u - u[mesh.pairing]


# ---------------------------------------------------------------------------
# sample points


def fibonacci_directions(n: int) -> np.ndarray:
    """``n`` unit vectors on a Fibonacci spiral over the upper hemisphere (z >= 0)."""
    golden = math.pi * (3.0 - math.sqrt(5.0))
    k = np.arange(n) + 0.5
    z = 1.0 - k / n  # z in (0, 1): one representative per antipodal pair
    r = np.sqrt(1.0 - z * z)
    phi = golden * np.arange(n)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def spread_vertices(mesh: SymmetricMesh, n: int) -> list[int]:
    """``n`` well-spread vertices, one per pair ``{v, sigma v}``, in a deterministic order."""
    if n <= 0:
        return []
    x = mesh.vertices
    if mesh.manifold.kind == "torus":
        big, _ = mesh.manifold.params
        # spread over theta in [0, pi) (a fundamental domain) and phi in [0, 2 pi)
        golden = (math.sqrt(5.0) - 1.0) / 2.0
        pts = []
        for k in range(n):
            th = math.pi * (k + 0.5) / n
            ph = 2.0 * math.pi * ((k * golden) % 1.0)
            pts.append(np.array([math.cos(th), math.sin(th), 0.0]) * big
                       + np.array([math.cos(ph) * math.cos(th), math.cos(ph) * math.sin(th),
                                   math.sin(ph)]) * mesh.manifold.params[1])
        targets = np.array(pts)
    else:
        dirs = fibonacci_directions(n)
        scale = np.asarray(mesh.manifold.params if mesh.manifold.kind == "ellipsoid" else (1.0, 1.0, 1.0))
        span = np.max(np.linalg.norm(x, axis=1))
        targets = dirs * (scale if mesh.manifold.kind == "ellipsoid" else span)
    chosen: list[int] = []
    taken: set[int] = set()
    for tgt in targets:
        order = np.argsort(np.linalg.norm(x - tgt, axis=1), kind="stable")
        for v in order[:64]:
            v = int(v)
            if v not in taken:
                break
        chosen.append(v)
        taken.update((v, int(mesh.pairing[v])))
    return chosen


def axis_vertices(mesh: SymmetricMesh) -> list[int]:
    """Vertices farthest along +x, +y and +z (one per antipodal axis pair)."""
    return [int(np.argmax(mesh.vertices[:, k])) for k in range(3)]


# ---------------------------------------------------------------------------
# Nehari descent


@dataclass
class DescentResult:
    u: np.ndarray = field(repr=False)
    J_value: float
    residual_norm: float
    iterations: int
    converged: bool
    stalled: bool = False
    polished: bool = False
    start: int = -1


def nehari_descent(forms: AssembledForms, u0, p: float, gtol: float = 1e-6,
                   max_iter: int = 400, armijo: float = 1e-4, stall_rtol: float = 1e-12,
                   stall_window: int = 20) -> DescentResult:
    """Nehari-projected ``H^1_eps`` gradient flow for ``J`` with Armijo steps.

    The ``E``-gradient of ``J`` is the residual ``F(u)``; each trial step
    ``u - s F(u)`` is pulled back onto the Nehari set by :func:`nehari_scale`.
    Equivariant input stays exactly equivariant.  The flow also stops once
    ``J`` has dropped by less than ``stall_rtol`` (relative) over
    ``stall_window`` steps, which happens when it drifts along a nearly
    flat orbit of peaks.
    """
    u = nehari_project(forms, u0, p)
    J = forms.J(u, p)
    history = [J]
    step = 1.0
    k = 0
    for k in range(1, max_iter + 1):
        F = forms.residual(u, p)
        fnorm = forms.norm(F)
        if fnorm <= gtol * forms.norm(u):
            return DescentResult(u, J, fnorm, k - 1, True)
        if len(history) > stall_window and history[-stall_window - 1] - J <= stall_rtol * abs(J):
            return DescentResult(u, J, fnorm, k - 1, False, stalled=True)
        while True:
            trial = nehari_project(forms, u - step * F, p)
            J_trial = forms.J(trial, p)
            if J_trial <= J - armijo * step * fnorm**2:
                break
            step *= 0.5
            if step < 1e-12:
                return DescentResult(u, J, fnorm, k, False, stalled=True)
        u, J = trial, J_trial
        history.append(J)
        step = min(1.0, 1.5 * step)
    F = forms.residual(u, p)
    fnorm = forms.norm(F)
    return DescentResult(u, J, fnorm, k, fnorm <= gtol * forms.norm(u))


def polish(forms: AssembledForms, result: DescentResult, p: float, tol: float = 1e-9) -> DescentResult:
    """Newton refinement of a descent end point; kept only if it stays nontrivial and lower or equal in J."""
    from .solve import newton_solve

    rec = newton_solve(forms, result.u, p, tol=tol, max_iter=30)
    if rec.converged and rec.nodal_domains == 2 and rec.J_value <= result.J_value * (1 + 1e-9):
        return DescentResult(rec.u, rec.J_value, rec.residual_norm, result.iterations + rec.iterations,
                             True, result.stalled, True, result.start)
    return result


@dataclass
class MTauEstimate:
    value: float
    per_start: list[DescentResult]

    @property
    def spread(self) -> float:
        """Relative spread ``(max - min) / min`` of the finite per-start levels."""
        vals = [r.J_value for r in self.per_start if np.isfinite(r.J_value)]
        if not vals:
            return math.nan
        return (max(vals) - min(vals)) / min(vals)


def estimate_m_tau(mesh: SymmetricMesh, g: TensorField | None, eps: float,
                   profile: RadialProfile, p: float, n_samples: int,
                   gtol: float = 1e-6, max_iter: int = 400, details: bool = False,
                   quadrature: str = "lumped"):
    """Upper estimate of the least equivariant Nehari level by descents from ``phi(q_i)``.

    Each descent end point is refined by Newton when that converges to a
    sign-changing solution.  With ``details=True`` the per-start results are
    returned in an :class:`MTauEstimate`.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    forms = forms_for(mesh, g, eps, quadrature)
    results = []
    for q in spread_vertices(mesh, n_samples):
        start = phi_ansatz(mesh, g, eps, q, profile, p, forms=forms)
        res = polish(forms, nehari_descent(forms, start, p, gtol, max_iter), p)
        res.start = q
        results.append(res)
    finite = [r.J_value for r in results if np.isfinite(r.J_value)]
    if not finite:
        raise ConvergenceError("no descent produced a finite energy")
    est = MTauEstimate(min(finite), results)
    return est if details else est.value
