import numpy as np
import pytest

from equivar_nehari.census import (EXPERIMENTS, ExperimentConfig, census_starts, poincare_p1,
                                   run_census, run_convergence_study, run_degeneracy_breaking,
                                   run_identity_check)
from equivar_nehari.cli import main
from equivar_nehari.errors import MeshError
from equivar_nehari.manifold import build_builtin


def _cfg(**kw):
    return ExperimentConfig.from_mapping(kw)


def test_poincare_values():
    assert poincare_p1("sphere") == 3
    assert poincare_p1("ellipsoid(1.0,1.1,1.2)") == 3
    assert poincare_p1("torus(2,0.7)") == 4
    with pytest.raises(MeshError):
        poincare_p1("file:x.off")


def test_config_parsing(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# comment\nmanifold = torus(2, 0.7)\neps = 0.3, 0.2  # inline\naxis_starts = no\n")
    cfg = ExperimentConfig.from_file(path)
    assert cfg.manifold == "torus(2, 0.7)" and cfg.eps == (0.3, 0.2) and cfg.axis_starts is False
    with pytest.raises(ValueError):
        ExperimentConfig.from_mapping({"wrong_key": 1})
    with pytest.raises(ValueError):
        _cfg(eps="0.5, 1.5")


def test_convergence_insufficient_data():
    rep = run_convergence_study(_cfg(refinement=2, eps="0.4", perturbation="none", n_samples=1,
                                     quadrature="lumped"))
    assert rep.verdict == "insufficient data" and not rep.passed
    assert len(rep.rows) == 1


def test_identity_check_trend_and_mirror_consistency():
    rep = run_identity_check(_cfg(refinement=3, eps="0.4, 0.2", n_samples=3, d_max=0.5))
    by_eps = {}
    for row in rep.rows:
        by_eps.setdefault(row["eps"], []).append(float(row["distance"]))
    assert max(by_eps["0.4"]) > max(by_eps["0.2"])
    # rows come in (q, sigma q) couples with equal distances
    d = [float(r["distance"]) for r in rep.rows]
    assert all(abs(a - b) <= 1e-12 for a, b in zip(d[::2], d[1::2]))
    assert rep.passed


def test_degeneracy_zero_amplitude_is_noop():
    rep = run_degeneracy_breaking(_cfg(refinement=3, eps="0.5", amplitude=0.0, amplitudes="0.0"))
    base, stage = rep.rows
    for key in ("J", "kernel_dim", "margin", "lambda_0", "lambda_1"):
        assert base[key] == stage[key]
    with pytest.raises(ValueError):
        run_degeneracy_breaking(_cfg(manifold="torus(2,0.7)", refinement=2, eps="0.5"))


def test_census_empty_starts():
    rep = run_census(_cfg(manifold="ellipsoid(1.0,1.1,1.2)", refinement=2, eps="0.3",
                          perturbation="none"), starts=[])
    assert rep.pairs_found == 0 and rep.verdict == "bound_not_met"


def test_census_round_sphere_flags_orbits():
    rep = run_census(_cfg(refinement=3, eps="0.3", perturbation="none", n_samples=4))
    assert rep.verdict == "orbit_degenerate"
    assert rep.pairs_found >= 1


def test_census_starts_deduplicated():
    mesh = build_builtin("ellipsoid(1.0,1.1,1.2)", 3)
    starts = census_starts(mesh, _cfg(manifold="ellipsoid(1.0,1.1,1.2)", n_samples=10))
    classes = {min(v, int(mesh.pairing[v])) for v in starts}
    assert len(classes) == len(starts) >= 3


def test_cli_exit_codes(tmp_path, capsys):
    gs = tmp_path / "gs.cfg"
    gs.write_text(f"n = 1\np = 4\noutput_csv = {tmp_path / 'gs.csv'}\n")
    assert main(["ground-state", "--config", str(gs)]) == 0
    assert "U(0) = 1.41421" in capsys.readouterr().out
    assert (tmp_path / "gs.csv").read_text().startswith("r,U")
    code = main(["convergence", "--set", "refinement=2", "--set", "eps=0.4", "--set", "n_samples=1",
                 "--set", "perturbation=none", "--set", "quadrature=lumped"])
    assert code == 2
    assert main(["census", "--set", "bogus=1"]) == 1
    assert "error" in capsys.readouterr().err


def test_cli_lists_all_experiments():
    assert set(EXPERIMENTS) == {"ground-state", "calculus-check", "convergence", "identity-check",
                                "degeneracy", "census"}
    with pytest.raises(SystemExit):
        main(["nonsense"])


def test_calculus_cli_small(tmp_path):
    out = tmp_path / "calc.csv"
    code = main(["calculus-check", "--set", "refinement=1", "--set", "eps=0.3", "--set", "n_trials=3",
                 "--csv", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("trial,term") and len(lines) == 1 + 3 * 5
    assert np.all([row.split(",")[-1] == "1" for row in lines[1:]])
