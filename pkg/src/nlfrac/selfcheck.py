"""Invariant suite on a tiny grid (dim=1, N=32), used by ``nlfrac selfcheck``."""

from __future__ import annotations

import warnings
from typing import List, Tuple

import numpy as np

from .dn_map import dn_pair, quadratic_form
from .errors import ContractionRegimeWarning
from .grid import build_grid, inner_product
from .linear_solver import LinearProblem, dense_oracle_solve, interior_system, solve_dirichlet
from .linearization import LinearizationState, aggregate_check, cascade_residuals, compute_cascade
from .nonlinear_solver import ContractionConfig, nonlinear_residual, solve_nlfse
from .operators import FracParams, Nonlinearity, frac_laplacian
from .recovery import Simulator, make_task, run_full_recovery
from .shapes import cosine_bump, smooth_bump

__all__ = ["run_selfcheck"]

Check = Tuple[str, bool, float]


def _grid():
    return build_grid(1, 32, 2 * np.pi, {
        "omega": {"type": "box", "lo": [2.0], "hi": [4.0]},
        "w1": {"type": "box", "lo": [4.4], "hi": [5.8]},
        "w2": {"type": "box", "lo": [0.5], "hi": [1.6]},
    })


def run_selfcheck(seed: int = 0) -> List[Check]:
    rng = np.random.default_rng(seed)
    g = _grid()
    s = 1.5
    out: List[Check] = []

    def add(name: str, value: float, tol: float):
        out.append((name, bool(value <= tol), float(value)))

    u, v = rng.standard_normal((2,) + g.shape)
    Au, Av = frac_laplacian(g, u, s), frac_laplacian(g, v, s)
    add("operator self-adjoint", abs(inner_product(g, Au, v) - inner_product(g, u, Av)) / np.linalg.norm(u), 1e-11)
    add("operator positive", max(0.0, -inner_product(g, Au, u)), 1e-11)
    half = frac_laplacian(g, frac_laplacian(g, u, s / 2), s / 2)
    add("operator semigroup", float(np.max(np.abs(half - Au)) / np.max(np.abs(Au))), 1e-11)

    q = 0.5 * smooth_bump(g, 3.0, 0.9)
    F = g.restrict_interior(rng.standard_normal(g.shape))
    f = 0.1 * cosine_bump(g, 5.0, 0.6)
    p = LinearProblem(g, s, q, F, f)
    it = solve_dirichlet(p, tol=1e-12)
    add("linear iterative vs dense", float(np.max(np.abs(it.solution - dense_oracle_solve(p).solution))), 1e-9)

    params = FracParams(s, 1, 2, 1)
    a = smooth_bump(g, 3.0, 0.9)
    P = Nonlinearity(params, g, {(1, (0,)): a, (1, (1,)): 0.3 * a})
    cfg = ContractionConfig(delta=0.5, eps0=1.0, tol=1e-13, max_iter=500, rtol=1e-16)
    rep = solve_nlfse(g, q, P, f, cfg)
    add("contraction residual", nonlinear_residual(g, s, q, P, rep.solution) / (1 + np.max(np.abs(f))), 1e-11)
    lin = solve_nlfse(g, q, Nonlinearity.zero(params, g), f, cfg).solution
    add("linear degeneration", float(np.max(np.abs(lin - interior_system(g, s, q).solve(None, f)))), 1e-12)

    data = [0.05 * cosine_bump(g, 4.9, 0.5), 0.04 * cosine_bump(g, 5.3, 0.5)]
    state = compute_cascade(LinearizationState(g, q, P, data), 2)
    add("cascade residual", max(cascade_residuals(state).values()), 1e-12)
    add("aggregate T_k agreement", aggregate_check(state, np.ones(2)).max_T_mismatch, 1e-10)

    g1, g2 = 0.1 * cosine_bump(g, 5.0, 0.5), cosine_bump(g, 1.0, 0.4)
    v1 = interior_system(g, s, q).solve(None, g1)
    v2 = interior_system(g, s, q).solve(None, g2)
    add("linear DN symmetry", abs(quadratic_form(g, v1, g2, q, s) - quadratic_form(g, v2, g1, q, s)), 1e-10)
    psi = g.restrict_interior(smooth_bump(g, 3.0, 0.5))
    add("interior test vanishing", abs(dn_pair(g, f, psi, q, P, cfg)), 1e-11)

    sim = Simulator(g, q, Nonlinearity(FracParams(s, 0, 2, 1), g, {(1, (0,)): a}))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ContractionRegimeWarning)
        report = run_full_recovery(make_task(g, sim, "oracle"))
    add("oracle recovery", max(report.errors.values()), 1e-5)
    return out


def main() -> int:  # pragma: no cover
    res = run_selfcheck()
    for name, ok, val in res:
        print(f"{'pass' if ok else 'fail'}: {name} ({val:.3e})")
    return 0 if all(ok for _, ok, _ in res) else 4
