"""Antisymmetric least-energy solutions of ``-eps^2 Lap_g u + u = |u|^(p-2) u``.

The package works on closed surfaces carrying a fixed-point-free isometric
involution ``sigma`` and looks for solutions with ``u(sigma x) = -u(x)``.
The submodules are independent enough to be used one at a time:

``ground_state``
    Radial ground state of ``-Lap U + U = U^(p-1)`` in ``R^n`` and ``m_infinity``.
``manifold``
    Symmetric meshes, metrics, perturbations and geodesic distances.
``forms``
    Finite element forms ``E``, ``G``, ``N``, the energy ``J`` and ``F``.
``calculus``
    Derivatives of the forms with respect to ``eps`` and the metric.
``ansatz``
    Nehari projection, the two-bubble ansatz and the level estimate.
``solve``
    Newton solver, linearized spectrum, nodal domains and barycenters.
``census`` / ``cli``
    Configured experiments and the ``equivar-nehari`` command.
"""
from .errors import (BallOverlapError, BracketError, ConvergenceError, EquivarNehariError,
                     ExponentRangeError, MeshError, ZeroFieldError)
from .ground_state import (RadialProfile, eval_bubble, load_profile, m_infinity,
                           save_profile, solve_radial)
from .manifold import (SymmetricMesh, TensorField, build_builtin, check_involution,
                       fast_marching, induced_metric, make_perturbation, parse_manifold_id)
from .forms import AssembledForms, J_energy, N_functional, apply_A, assemble, residual_F
from .calculus import Direction, b_tensor, fd_check
from .ansatz import estimate_m_tau, nehari_descent, nehari_project, nehari_scale, phi_ansatz
from .solve import (SolutionRecord, SpectrumReport, barycenter, deflated_search,
                    linearized_spectrum, newton_solve, nodal_domains)

__version__ = "0.1.0"

__all__ = [
    "AssembledForms", "BallOverlapError", "BracketError", "ConvergenceError", "Direction",
    "EquivarNehariError", "ExponentRangeError", "J_energy", "MeshError", "N_functional",
    "RadialProfile", "SolutionRecord", "SpectrumReport", "SymmetricMesh", "TensorField",
    "ZeroFieldError", "apply_A", "assemble", "b_tensor", "barycenter", "build_builtin",
    "check_involution", "deflated_search", "estimate_m_tau", "eval_bubble", "fast_marching",
    "fd_check", "induced_metric", "linearized_spectrum", "load_profile", "m_infinity",
    "make_perturbation", "nehari_descent", "nehari_project", "nehari_scale", "newton_solve",
    "nodal_domains", "parse_manifold_id", "phi_ansatz", "residual_F", "save_profile",
    "solve_radial",
]
