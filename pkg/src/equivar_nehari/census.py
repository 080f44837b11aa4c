"""Config-driven experiments: level convergence, barycenter identity, degeneracy breaking, census."""
from __future__ import annotations

import configparser
import csv
import io
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .ansatz import axis_vertices, estimate_m_tau, phi_ansatz, spread_vertices
from .calculus import Direction, fd_check
from .errors import EquivarNehariError, MeshError
from .forms import assemble
from .ground_state import RadialProfile, load_profile, m_infinity, save_profile, solve_radial
from .manifold import (BumpPair, Conformal, Ellipsoidal, TensorField, build_builtin, induced_metric,
                       make_perturbation, parse_manifold_id, random_symmetric_tensor)
from .solve import barycenter, deflated_search, linearized_spectrum, newton_solve

# ---------------------------------------------------------------------------
# configuration


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, (int, float)):
        return (float(text),)
    if isinstance(text, (list, tuple)):
        return tuple(float(x) for x in text)
    return tuple(float(x) for x in str(text).replace(";", ",").split(",") if x.strip())


@dataclass
class ExperimentConfig:
    """Flat key-value experiment configuration.

    Lists (``eps``, ``amplitudes``, ``direction``) are comma-separated.
    """

    manifold: str = "sphere"
    refinement: int = 4
    eps: tuple = (0.4, 0.2, 0.1)
    p: float = 4.0
    n: int = 2
    quadrature: str = "element"
    perturbation: str = "ellipsoidal"
    amplitude: float = 0.05
    amplitudes: tuple = ()
    direction: tuple = (0.0, 1.0, 2.0)
    bump_radius: float = 0.5
    n_samples: int = 4
    tol: float = 1e-9
    kernel_tol: float = 1e-3
    n_eigs: int = 8
    d_max: float = 0.2
    n_trials: int = 20
    fd_tol: float = 1e-5
    axis_starts: bool = True
    seed: int = 0
    profile_cache: str = ""
    output_csv: str = ""
    output_report: str = ""

    _LISTS = ("eps", "amplitudes", "direction")

    def __post_init__(self):
        for name in self._LISTS:
            setattr(self, name, _floats(getattr(self, name)))
        self.refinement = int(self.refinement)
        self.n = int(self.n)
        self.n_samples = int(self.n_samples)
        self.n_eigs = int(self.n_eigs)
        self.n_trials = int(self.n_trials)
        self.seed = int(self.seed)
        for name in ("p", "amplitude", "bump_radius", "tol", "kernel_tol", "d_max", "fd_tol"):
            setattr(self, name, float(getattr(self, name)))
        if isinstance(self.axis_starts, str):
            self.axis_starts = self.axis_starts.strip().lower() in ("1", "true", "yes", "on")
        parse_manifold_id(self.manifold)
        if any(not 0 < e < 1 for e in self.eps):
            raise ValueError("eps values must lie in (0, 1)")
        if self.perturbation not in ("none", "ellipsoidal", "conformal", "bump_pair"):
            raise ValueError(f"unknown perturbation {self.perturbation!r}")
        if self.quadrature not in ("lumped", "element"):
            raise ValueError("quadrature must be lumped or element")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**mapping)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
        parser.optionxform = str
        parser.read_string("[config]\n" + Path(path).read_text())
        return cls.from_mapping(dict(parser["config"]))


# ---------------------------------------------------------------------------
# reports


@dataclass
class Report:
    """Human-readable lines, CSV rows and a verdict."""

    name: str
    rows: list[dict] = field(default_factory=list)
    lines: list[str] = field(default_factory=list)
    verdict: str = "pass"
    passed: bool = True

    def csv(self) -> str:
        if not self.rows:
            return ""
        buf = io.StringIO()
        header: list[str] = []
        for row in self.rows:
            header += [k for k in row if k not in header]
        writer = csv.DictWriter(buf, fieldnames=header, lineterminator="\n", restval="")
        writer.writeheader()
        writer.writerows(self.rows)
        return buf.getvalue()

    def text(self) -> str:
        return "\n".join([f"== {self.name} ==", *self.lines, f"verdict: {self.verdict}"]) + "\n"


def _fmt(x, digits=10) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return "nan"
    return f"{x:.{digits}g}"


# ---------------------------------------------------------------------------
# shared helpers


def poincare_p1(manifold_id) -> int:
    """Total Z2-Betti number of the quotient by the antipodal map."""
    mf = parse_manifold_id(manifold_id)
    table = {"sphere": 3, "ellipsoid": 3, "torus": 4}
    if mf.kind not in table:
        raise MeshError(f"no Poincare polynomial known for {mf}")
    return table[mf.kind]


def profile_for(config: ExperimentConfig) -> RadialProfile:
    path = Path(config.profile_cache) if config.profile_cache else None
    if path is not None and path.exists():
        return load_profile(path)
    prof = solve_radial(config.n, config.p)
    if path is not None:
        save_profile(prof, path)
    return prof


def perturbation_for(mesh, config: ExperimentConfig, amplitude: float | None = None) -> TensorField:
    amp = config.amplitude if amplitude is None else amplitude
    kind = config.perturbation
    if kind == "ellipsoidal":
        return make_perturbation(mesh, Ellipsoidal.from_amplitude(amp, config.direction))
    if kind == "conformal":
        return make_perturbation(mesh, Conformal(alpha0=amp))
    if kind == "bump_pair":
        return make_perturbation(mesh, BumpPair(axis_vertices(mesh)[2], config.bump_radius, "h12", amp))
    raise ValueError(f"unknown perturbation {kind!r}")


def perturbed_metric(mesh, config, amplitude=None) -> TensorField | None:
    """Induced metric plus the configured perturbation; ``None`` when there is none."""
    amp = config.amplitude if amplitude is None else amplitude
    if config.perturbation == "none" or amp == 0.0:
        return None
    return induced_metric(mesh) + perturbation_for(mesh, config, amp)


def _strictly_decreasing(values) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


# ---------------------------------------------------------------------------
# experiments


def run_convergence_study(config: ExperimentConfig) -> Report:
    """Estimated ``m_tau / (2 m_inf)`` over the ``eps`` list, unperturbed and perturbed."""
    report = Report("convergence")
    eps_list = list(config.eps)
    prof = profile_for(config)
    m_inf = m_infinity(prof)
    mesh = build_builtin(config.manifold, config.refinement)
    metrics = [("g0", None)]
    if perturbed_metric(mesh, config) is not None:
        metrics.append((f"{config.perturbation}:{config.amplitude:g}", perturbed_metric(mesh, config)))
    ratios: dict[str, list[float]] = {}
    for tag, g in metrics:
        ratios[tag] = []
        for eps in eps_list:
            try:
                est = estimate_m_tau(mesh, g, eps, prof, config.p, config.n_samples, details=True,
                                     quadrature=config.quadrature, max_iter=200)
                value, spread, status = est.value, est.spread, "ok"
            except EquivarNehariError as exc:
                value, spread, status = math.nan, math.nan, f"failed: {exc}"
            ratio = value / (2 * m_inf)
            ratios[tag].append(ratio)
            report.rows.append({"metric": tag, "eps": _fmt(eps, 6), "m_tau": _fmt(value),
                                "ratio": _fmt(ratio), "start_spread": _fmt(spread, 4), "status": status})
            report.lines.append(f"{tag:>18s}  eps={eps:<6g} m_tau={value:.8f}  ratio={ratio:.6f}")
    base = ratios["g0"]
    if len(metrics) > 1:
        pert = ratios[metrics[1][0]]
        change = max(abs(a - b) / abs(b) for a, b in zip(pert, base))
        report.lines.append(f"max relative change under perturbation: {change:.4f}")
    if len(eps_list) < 3 or not _strictly_decreasing(eps_list):
        report.verdict, report.passed = "insufficient data", False
        return report
    decreasing = _strictly_decreasing(base)
    approaching = _strictly_decreasing([abs(r - 1.0) for r in base])
    in_band = 0.85 <= base[-1] <= 1.15
    report.lines.append(f"ratio decreasing as eps decreases: {decreasing}")
    report.lines.append(f"|ratio - 1| decreasing as eps decreases: {approaching}")
    report.lines.append(f"ratio at smallest eps within [0.85, 1.15]: {in_band}")
    report.passed = decreasing and in_band
    report.verdict = "trend_met" if report.passed else "trend_not_met"
    return report


def run_identity_check(config: ExperimentConfig) -> Report:
    """Ambient distance ``|beta(phi(q)) - q|`` over spread samples, per ``eps``."""
    report = Report("identity-check")
    prof = profile_for(config)
    mesh = build_builtin(config.manifold, config.refinement)
    samples = spread_vertices(mesh, config.n_samples)
    worst = {}
    for eps in config.eps:
        forms = assemble(mesh, None, eps, config.quadrature)
        dists = []
        for q in samples:
            for v, label in ((q, "q"), (int(mesh.pairing[q]), "sigma_q")):
                phi = phi_ansatz(mesh, None, eps, v, prof, config.p, forms=forms)
                beta = barycenter(mesh, None, phi, config.p, weights=forms.m_lumped)
                d = float(np.linalg.norm(beta - mesh.vertices[v]))
                dists.append(d)
                report.rows.append({"eps": _fmt(eps, 6), "vertex": v, "role": label, "distance": _fmt(d)})
        worst[eps] = max(dists)
        report.lines.append(f"eps={eps:<6g} max={max(dists):.6f} mean={np.mean(dists):.6f} "
                            f"({len(samples)} samples and their mirrors)")
    eps_min = min(config.eps)
    report.passed = worst[eps_min] <= config.d_max
    report.verdict = "pass" if report.passed else "fail"
    report.lines.append(f"threshold d={config.d_max:g} applied at eps={eps_min:g}")
    return report


def _spectrum_stage(forms, u0, config, tag):
    rec = newton_solve(forms, u0, config.p, config.tol, metric_tag=tag)
    rec.spectrum = linearized_spectrum(forms, rec.u, config.p, config.n_eigs, config.kernel_tol)
    return rec


def run_degeneracy_breaking(config: ExperimentConfig) -> Report:
    """Kernel of the linearisation on the round sphere, then after symmetric perturbations."""
    mf = parse_manifold_id(config.manifold)
    if mf.kind != "sphere":
        raise ValueError("degeneracy breaking starts from the round sphere")
    report = Report("degeneracy")
    prof = profile_for(config)
    mesh = build_builtin(config.manifold, config.refinement)
    eps = config.eps[0]
    q = axis_vertices(mesh)[2]
    forms0 = assemble(mesh, None, eps, config.quadrature)
    base = _spectrum_stage(forms0, phi_ansatz(mesh, None, eps, q, prof, config.p, forms=forms0),
                           config, "g0")
    stages = [("g0", 0.0, base)]
    amps = list(config.amplitudes) or [config.amplitude]
    if config.amplitude not in amps:
        amps.append(config.amplitude)
    for amp in sorted(amps):
        forms = assemble(mesh, perturbed_metric(mesh, config, amp), eps, config.quadrature)
        stages.append((f"{config.perturbation}:{amp:g}", amp, _spectrum_stage(forms, base.u, config, "")))
    margin0 = base.spectrum.margin
    for tag, amp, rec in stages:
        sp = rec.spectrum
        growth = sp.margin / margin0 if margin0 > 0 else math.inf
        row = {"metric": tag, "amplitude": _fmt(amp, 6), "eps": _fmt(eps, 6), "J": _fmt(rec.J_value),
               "residual": f"{rec.residual_norm:.3e}", "converged": int(rec.converged),
               "nodal_domains": rec.nodal_domains, "kernel_tol": f"{sp.kernel_tol:.3e}",
               "kernel_dim": sp.kernel_dim_estimate, "morse_index": sp.morse_index,
               "margin": f"{sp.margin:.6e}", "margin_growth": _fmt(growth, 6)}
        for k, lam in enumerate(sp.eigenvalues[:config.n_eigs]):
            row[f"lambda_{k}"] = f"{lam:.6e}"
        report.rows.append(row)
        report.lines.append(f"{tag:>18s}  kernel={sp.kernel_dim_estimate} morse={sp.morse_index} "
                            f"margin={sp.margin:.3e} growth={growth:.2f}  |F|={rec.residual_norm:.1e}")
    target = next(rec for tag, amp, rec in stages[1:] if amp == config.amplitude)
    growth = target.spectrum.margin / margin0 if margin0 > 0 else math.inf
    ok = (base.converged and target.converged and base.spectrum.kernel_dim_estimate >= 2
          and target.spectrum.kernel_dim_estimate == 0 and growth >= 10.0)
    report.passed = bool(ok)
    report.verdict = "degeneracy_broken" if ok else "degeneracy_not_broken"
    return report


def census_starts(mesh, config: ExperimentConfig) -> list[int]:
    starts = axis_vertices(mesh) if config.axis_starts else []
    seen = {v for s in starts for v in (s, int(mesh.pairing[s]))}
    for v in spread_vertices(mesh, config.n_samples):
        if v not in seen:
            starts.append(v)
            seen.update((v, int(mesh.pairing[v])))
    return starts


@dataclass
class CensusReport(Report):
    manifold: str = ""
    P1_bound: int = 0
    pairs_found: int = 0
    excluded: int = 0
    records: list = field(default_factory=list, repr=False)


def run_census(config: ExperimentConfig, starts: list[int] | None = None) -> CensusReport:
    """Count distinct sign-changing pairs with ``J < 3 m_inf`` against ``P1`` of the quotient."""
    mf = parse_manifold_id(config.manifold)
    report = CensusReport("census", manifold=str(mf), P1_bound=poincare_p1(mf))
    prof = profile_for(config)
    m_inf = m_infinity(prof)
    mesh = build_builtin(config.manifold, config.refinement)
    eps = config.eps[-1]
    g = perturbed_metric(mesh, config)
    forms = assemble(mesh, g, eps, config.quadrature)
    if starts is None:
        starts = census_starts(mesh, config)
    fields_ = [phi_ansatz(mesh, g, eps, q, prof, config.p, forms=forms) for q in starts]
    result = deflated_search(forms, fields_, config.p, config.tol, labels=[str(q) for q in starts],
                             metric_tag="g0" if g is None else "perturbed")
    accepted = [r for r in result.pairs if r.J_value < 3 * m_inf and r.nodal_domains == 2]
    report.pairs_found = len(accepted)
    report.excluded = result.rejected + len(result.pairs) - len(accepted)
    payload = sorted(accepted, key=lambda r: (r.J_value, r.start))
    report.records = payload
    report.rows = [dict(r.summary_row(0), J_over_m_inf=_fmt(r.J_value / m_inf)) for r in payload]
    report.lines.append(f"manifold {mf}, eps={eps:g}, refinement {config.refinement}, "
                        f"{len(starts)} starts, m_inf={m_inf:.10f}")
    for r in payload:
        b = r.barycenter
        report.lines.append(f"  pair from start {r.start:>6s}: J/m_inf={r.J_value / m_inf:.6f} "
                            f"nodal={r.nodal_domains} beta=({b[0]:.3f},{b[1]:.3f},{b[2]:.3f})")
    report.lines.append(f"pairs found: {report.pairs_found}  (P1 bound {report.P1_bound}; "
                        f"excluded {report.excluded})")
    if mf.kind == "sphere" and g is None and report.pairs_found:
        report.verdict, report.passed = "orbit_degenerate", False
        report.lines.append("round sphere: solutions form rotation orbits, so no count verdict")
    elif report.pairs_found >= report.P1_bound:
        report.verdict, report.passed = "bound_met", True
    else:
        report.verdict, report.passed = "bound_not_met", False
    return report


def run_ground_state(config: ExperimentConfig) -> Report:
    report = Report("ground-state")
    prof = solve_radial(config.n, config.p)
    m_inf = m_infinity(prof)
    for r, u in zip(prof.r_grid[::10], prof.u_values[::10]):
        report.rows.append({"r": _fmt(float(r), 8), "U": _fmt(float(u), 15)})
    report.lines += [f"n={config.n} p={config.p:g}", f"U(0) = {prof.u0:.15f}",
                     f"m_inf = {m_inf:.15f}", f"decay rate = {prof.decay_rate:.6f}"]
    return report


def run_calculus_check(config: ExperimentConfig) -> Report:
    """FD validation of the four derivative formulas on random symmetric data."""
    report = Report("calculus-check")
    mesh = build_builtin(config.manifold, config.refinement)
    rng = np.random.default_rng(config.seed)
    eps0 = config.eps[0]
    g = induced_metric(mesh)
    worst: dict[str, float] = {}
    for trial in range(config.n_trials):
        h = random_symmetric_tensor(mesh, rng, 0.1)
        d = Direction(0.05 * float(rng.standard_normal()), h)
        u = rng.standard_normal(mesh.n_vertices)
        v = rng.standard_normal(mesh.n_vertices)
        for chk in fd_check(mesh, eps0, g, d, u, v, config.p, config.fd_tol, config.quadrature):
            worst[chk.term] = max(worst.get(chk.term, 0.0), chk.rel_error)
            report.rows.append({"trial": trial, "term": chk.term, "analytic": f"{chk.analytic:.12e}",
                                "finite_difference": f"{chk.finite_difference:.12e}",
                                "rel_error": f"{chk.rel_error:.3e}", "tol": f"{chk.tol:.0e}",
                                "passed": int(chk.passed)})
    report.passed = all(int(r["passed"]) for r in report.rows)
    for term, err in worst.items():
        report.lines.append(f"{term:>9s}  max rel error {err:.3e}")
    report.verdict = "pass" if report.passed else "fail"
    return report


EXPERIMENTS = {
    "ground-state": run_ground_state,
    "calculus-check": run_calculus_check,
    "convergence": run_convergence_study,
    "identity-check": run_identity_check,
    "degeneracy": run_degeneracy_breaking,
    "census": run_census,
}
