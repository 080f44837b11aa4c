"""Equivariant Newton solver, spectral audit, nodal domains and the barycenter map.

All equivariant computations run on reduced coordinates ``w`` with
``u = P w`` (``u[rep] = w``, ``u[sigma rep] = -w``), so every iterate is
exactly antisymmetric under the involution.  In these coordinates the
Jacobian of ``F(u) = u - A(|u|^(p-2) u)`` is

    F'(u) = I - E^-1 Jn(u),   Jn(u) = (p-1) (1/eps^2) int |u|^(p-2) phi_i phi_j,

and the Newton correction solves ``(E - Jn) d = E F(u)``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as dla
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as spla

from .errors import ConvergenceError, ZeroFieldError
from .forms import AssembledForms, ElementGeometry, is_equivariant, lumped_mass, project_equivariant
from .manifold import SymmetricMesh, TensorField, induced_metric

DENSE_LIMIT = 2500


@dataclass
class SpectrumReport:
    """Eigenvalues of ``v -> v - (p-1) A(|u|^(p-2) v)`` on the equivariant subspace."""

    eigenvalues: np.ndarray
    kernel_tol: float
    kernel_dim_estimate: int
    morse_index: int
    margin: float

    @classmethod
    def from_values(cls, values, kernel_tol: float, relative: bool = True) -> "SpectrumReport":
        values = np.asarray(values, dtype=float)
        values = values[np.lexsort((values, np.abs(values)))]
        tol = kernel_tol * float(np.max(np.abs(values))) if relative else kernel_tol
        kernel = int(np.sum(np.abs(values) < tol))
        morse = int(np.sum(values < -tol))
        margin = float(np.min(np.abs(values))) if len(values) else math.nan
        return cls(values, tol, kernel, morse, margin)

    @property
    def nondegeneracy_margin(self) -> float:
        """Smallest ``|lambda|`` outside the negative (Morse) directions."""
        nonneg = self.eigenvalues[self.eigenvalues >= -self.kernel_tol]
        return float(np.min(np.abs(nonneg))) if len(nonneg) else math.nan


@dataclass
class SolutionRecord:
    u: np.ndarray = field(repr=False)
    eps: float
    metric_tag: str
    J_value: float
    residual_norm: float
    nodal_domains: int
    barycenter: np.ndarray
    iterations: int
    converged: bool
    regularization: float = 0.0
    spectrum: SpectrumReport | None = None
    start: str = ""

    @property
    def is_trivial(self) -> bool:
        return not np.any(self.u)

    def summary_row(self, n_eigs: int = 8) -> dict:
        row = {
            "start": self.start,
            "eps": f"{self.eps:.6g}",
            "metric": self.metric_tag,
            "J": f"{self.J_value:.10f}",
            "residual": f"{self.residual_norm:.3e}",
            "converged": int(self.converged),
            "nodal_domains": self.nodal_domains,
            "beta_x": f"{self.barycenter[0]:.6f}",
            "beta_y": f"{self.barycenter[1]:.6f}",
            "beta_z": f"{self.barycenter[2]:.6f}",
        }
        eig = [] if self.spectrum is None else list(self.spectrum.eigenvalues[:n_eigs])
        for k in range(n_eigs):
            row[f"lambda_{k}"] = f"{eig[k]:.6e}" if k < len(eig) else ""
        return row

    def text_block(self, n_eigs: int = 8) -> str:
        b = self.barycenter
        lines = [
            f"record {self.start}",
            f"  eps            {self.eps:g}",
            f"  metric         {self.metric_tag}",
            f"  J              {self.J_value:.10f}",
            f"  residual       {self.residual_norm:.3e}",
            f"  nodal domains  {self.nodal_domains}",
            f"  barycenter     ({b[0]:.6f}, {b[1]:.6f}, {b[2]:.6f})",
        ]
        if self.spectrum is not None:
            eig = " ".join(f"{x:.4e}" for x in self.spectrum.eigenvalues[:n_eigs])
            lines.append(f"  eigenvalues    {eig}")
            lines.append(f"  kernel/morse   {self.spectrum.kernel_dim_estimate}/{self.spectrum.morse_index}")
        return "\n".join(lines)


def records_csv(records: list[SolutionRecord], n_eigs: int = 8) -> str:
    buf = io.StringIO()
    rows = [r.summary_row(n_eigs) for r in records]
    fields = list(rows[0]) if rows else list(SolutionRecord.summary_row.__annotations__)
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# nodal domains and barycenter


def nodal_domains(mesh: SymmetricMesh, u, zero_tol: float = 1e-12) -> int:
    """Connected components of ``{u > 0}`` plus those of ``{u < 0}`` on the vertex graph."""
    u = np.asarray(u, dtype=float)
    scale = float(np.max(np.abs(u), initial=0.0))
    if scale == 0.0:
        return 0
    thr = zero_tol * scale
    total = 0
    adj = mesh.adjacency
    for mask in (u > thr, u < -thr):
        idx = np.nonzero(mask)[0]
        if len(idx) == 0:
            continue
        sub = adj[idx][:, idx]
        total += csgraph.connected_components(sub, directed=False)[0]
    return int(total)


def vertex_measure(mesh: SymmetricMesh, g: TensorField | None) -> np.ndarray:
    geom = ElementGeometry.of(mesh, g if g is not None else induced_metric(mesh))
    m = lumped_mass(mesh, geom.area)
    return 0.5 * (m + m[mesh.pairing])


def barycenter(mesh: SymmetricMesh, g: TensorField | None, u, p: float,
               weights: np.ndarray | None = None) -> np.ndarray:
    """``int x (u+)^p / int (u+)^p`` with lumped vertex quadrature."""
    if weights is None:
        weights = vertex_measure(mesh, g)
    up = np.maximum(np.asarray(u, dtype=float), 0.0) ** p * weights
    total = up.sum()
    if total <= 0.0:
        raise ZeroFieldError("barycenter needs a field with nonzero positive part")
    return (up[:, None] * mesh.vertices).sum(axis=0) / total


# ---------------------------------------------------------------------------
# Newton


def _hessian_reduced(forms: AssembledForms, w, p: float) -> sparse.csc_matrix:
    return (forms.E_reduced - forms.nonlinear_jacobian_reduced(w, p)).tocsc()


def _reduced_norm(forms: AssembledForms, x) -> float:
    return float(np.sqrt(max(x @ (forms.E_reduced @ x), 0.0)))


def _newton_direction(forms, H, grad, w):
    """Solve ``H d = grad``; Tikhonov-regularise toward ``E`` when ``H`` is near singular."""
    mu = 0.0
    for _ in range(8):
        try:
            mat = H if mu == 0.0 else (H + mu * forms.E_reduced).tocsc()
            d = spla.splu(mat).solve(grad)
            if np.all(np.isfinite(d)):
                resid = np.linalg.norm(mat @ d - grad)
                if resid <= 1e-8 * max(np.linalg.norm(grad), 1e-300) and \
                        _reduced_norm(forms, d) <= 1e6 * max(_reduced_norm(forms, w), 1.0):
                    return d, mu
        except RuntimeError:
            pass
        mu = 1e-10 if mu == 0.0 else mu * 100.0
    raise ConvergenceError("Newton system could not be solved even with regularisation")


def newton_solve(forms: AssembledForms, u0, p: float, tol: float = 1e-9, max_iter: int = 50,
                 metric_tag: str = "", start: str = "", raise_on_failure: bool = False,
                 callback=None) -> SolutionRecord:
    """Damped Newton for ``F(u) = 0`` in the equivariant subspace.

    ``u0`` is projected onto the equivariant subspace first.  Steps are
    backtracked on ``||F||_E``; a near-singular Jacobian triggers a
    Tikhonov-regularised step whose size is recorded in the result.
    ``callback(k, u)``, if given, receives every accepted iterate as a full
    vertex field.
    """
    mesh = forms.mesh
    u0 = np.asarray(u0, dtype=float)
    if not is_equivariant(mesh, u0):
        u0 = project_equivariant(mesh, u0)
    w = mesh.to_reduced(u0).copy()
    F = forms.residual_reduced(w, p)
    fnorm = _reduced_norm(forms, F)
    max_reg = 0.0
    it = 0
    while fnorm > tol and it < max_iter:
        it += 1
        grad = forms.E_reduced @ F  # = E w - load(w)
        H = _hessian_reduced(forms, w, p)
        d, mu = _newton_direction(forms, H, grad, w)
        max_reg = max(max_reg, mu)
        lam = 1.0
        while True:
            trial = w - lam * d
            F_trial = forms.residual_reduced(trial, p)
            f_trial = _reduced_norm(forms, F_trial)
            if f_trial < (1.0 - 1e-4 * lam) * fnorm or lam < 1e-4:
                break
            lam *= 0.5
        w, F, fnorm = trial, F_trial, f_trial
        if callback is not None:
            callback(it, mesh.from_reduced(w))
    converged = fnorm <= tol
    if not converged and raise_on_failure:
        raise ConvergenceError(f"Newton did not converge in {max_iter} iterations (|F| = {fnorm:.3e})")
    u = mesh.from_reduced(w)
    return make_record(forms, u, p, fnorm, it, converged, metric_tag, start, max_reg)


def make_record(forms: AssembledForms, u, p, fnorm, iterations, converged, metric_tag="", start="",
                regularization=0.0) -> SolutionRecord:
    mesh = forms.mesh
    try:
        beta = barycenter(mesh, None, u, p, weights=forms.m_lumped)
    except ZeroFieldError:
        beta = np.zeros(3)
    return SolutionRecord(u, forms.eps, metric_tag, forms.J(u, p), float(fnorm),
                          nodal_domains(mesh, u), beta, iterations, bool(converged), regularization,
                          start=start)


# ---------------------------------------------------------------------------
# spectrum


def linearized_spectrum(forms: AssembledForms, u, p: float, n_eigs: int = 8,
                        kernel_tol: float = 1e-3, relative: bool = True) -> SpectrumReport:
    """Eigenvalues of smallest magnitude of ``(E - Jn(u)) v = lambda E v`` on reduced DOFs.

    ``kernel_tol`` is relative to the largest computed ``|lambda|`` unless
    ``relative`` is false.
    """
    mesh = forms.mesh
    u = np.asarray(u, dtype=float)
    if not is_equivariant(mesh, u):
        u = project_equivariant(mesh, u)
    w = mesh.to_reduced(u)
    if not np.any(w):
        return SpectrumReport.from_values(np.ones(n_eigs), kernel_tol, relative)
    H = _hessian_reduced(forms, w, p)
    E = forms.E_reduced
    n = H.shape[0]
    k = min(n_eigs, n)
    if n <= DENSE_LIMIT:
        vals = dla.eigh(H.toarray(), E.toarray(), eigvals_only=True)
        vals = vals[np.argsort(np.abs(vals), kind="stable")][:k]
    else:
        v0 = np.cos(np.arange(n) * 0.7) + 1.0
        try:
            vals = spla.eigsh(H, k=k, M=E, sigma=0.0, which="LM", v0=v0, tol=1e-12,
                              return_eigenvectors=False)
        except (RuntimeError, spla.ArpackNoConvergence) as exc:
            if n > 4 * DENSE_LIMIT:
                raise ConvergenceError("eigensolver did not converge") from exc
            vals = dla.eigh(H.toarray(), E.toarray(), eigvals_only=True)
            vals = vals[np.argsort(np.abs(vals), kind="stable")][:k]
    return SpectrumReport.from_values(vals, kernel_tol, relative)


def nehari_rayleigh(forms: AssembledForms, u, p: float) -> float:
    """``<F'(u) u, u>_E / <u, u>_E``; equals ``2 - p`` on Nehari solutions."""
    u = np.asarray(u, dtype=float)
    Jn = forms.nonlinear_jacobian(u, p)
    return float((forms.E(u) - u @ (Jn @ u)) / forms.E(u))


# ---------------------------------------------------------------------------
# clustering of solutions into pairs {u, -u}


@dataclass
class SearchResult:
    pairs: list[SolutionRecord]
    levels: list[list[int]]
    all_records: list[SolutionRecord]
    rejected: int

    @property
    def orbit_degenerate(self) -> bool:
        """Several distinct pairs share one energy level."""
        return any(len(level) > 1 for level in self.levels)


def same_pair(forms: AssembledForms, a: SolutionRecord, b: SolutionRecord,
              j_rtol: float = 1e-4, dist_rtol: float = 1e-3) -> bool:
    """Equal energy and equal field after optimal sign alignment."""
    if abs(a.J_value - b.J_value) > j_rtol * max(abs(a.J_value), abs(b.J_value)):
        return False
    scale = max(forms.norm(a.u), forms.norm(b.u), 1e-300)
    dist = min(forms.norm(a.u - b.u), forms.norm(a.u + b.u)) / scale
    if dist <= dist_rtol:
        return True
    spacing = forms.mesh.spacing
    bdist = min(np.linalg.norm(a.barycenter - b.barycenter), np.linalg.norm(a.barycenter + b.barycenter))
    return bdist <= 0.5 * spacing and dist <= 10 * dist_rtol


def cluster_records(forms: AssembledForms, records: list[SolutionRecord], j_rtol: float = 1e-4,
                    dist_rtol: float = 1e-3) -> tuple[list[SolutionRecord], list[list[int]]]:
    pairs: list[SolutionRecord] = []
    for rec in records:
        if not any(same_pair(forms, rec, other, j_rtol, dist_rtol) for other in pairs):
            pairs.append(rec)
    levels: list[list[int]] = []
    for i, rec in enumerate(pairs):
        for level in levels:
            ref = pairs[level[0]].J_value
            if abs(rec.J_value - ref) <= j_rtol * abs(ref):
                level.append(i)
                break
        else:
            levels.append([i])
    return pairs, levels


def deflated_search(forms: AssembledForms, starts, p: float, tol: float = 1e-9, max_iter: int = 50,
                    metric_tag: str = "", labels=None, min_norm: float = 1e-6) -> SearchResult:
    """Newton from every start, then cluster converged nontrivial records into pairs ``{u, -u}``."""
    records = []
    rejected = 0
    labels = labels if labels is not None else [str(i) for i in range(len(starts))]
    for label, u0 in zip(labels, starts):
        try:
            rec = newton_solve(forms, u0, p, tol, max_iter, metric_tag, str(label))
        except ConvergenceError:
            rejected += 1
            continue
        records.append(rec)
    good = [r for r in records if r.converged and forms.norm(r.u) > min_norm]
    rejected += len(records) - len(good)
    pairs, levels = cluster_records(forms, good)
    return SearchResult(pairs, levels, records, rejected)
