"""Fixed-point solver for (-Delta)^s u + q u + P(u) = 0 with u = f outside the domain."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractionError, ContractionRegimeWarning, ConvergenceError, ParameterError
from .grid import GridSpec, max_norm
from .linear_solver import LinearProblem, SolveReport, interior_system, residual_norm, solve_dirichlet
from .operators import Nonlinearity, eval_nonlinearity, partial_derivative

__all__ = [
    "ContractionConfig",
    "SmallnessReport",
    "solve_nlfse",
    "nonlinear_residual",
    "check_smallness",
]


@dataclass(frozen=True)
class ContractionConfig:
    delta: float = 0.1
    eps0: float = 0.01
    tol: float = 1e-12
    max_iter: int = 200
    rtol: float = 1e-15
    linear_method: str = "direct"
    linear_tol: float = 1e-12

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ParameterError("delta must lie in (0, 1)")
        if self.eps0 <= 0:
            raise ParameterError("eps0 must be positive")
        if self.tol <= 0 or self.max_iter < 1:
            raise ParameterError("tol must be positive and max_iter >= 1")
        if self.linear_method not in ("direct", "iterative"):
            raise ParameterError("linear_method must be 'direct' or 'iterative'")


def nonlinear_residual(grid: GridSpec, s: float, q, P: Nonlinearity, u) -> float:
    """max over the domain of |(-Delta)^s u + q u + P(u)|."""
    return residual_norm(grid, s, q, -eval_nonlinearity(grid, u, P), u)


def solve_nlfse(
    grid: GridSpec,
    q,
    P: Nonlinearity,
    f,
    cfg: ContractionConfig = ContractionConfig(),
    v0: Optional[np.ndarray] = None,
) -> SolveReport:
    """Contraction iteration v <- L^{-1}(-P(v + u0)) around the linear solution u0."""
    s = P.params.s
    f = grid.restrict_exterior(grid.check_field(f, "f"))
    q = grid.restrict_interior(grid.check_field(q, "q"))
    if max_norm(f) > cfg.eps0:
        warnings.warn(
            f"outside contraction regime: |f|_inf={max_norm(f):.3e} > eps0={cfg.eps0:.3e}",
            ContractionRegimeWarning,
            stacklevel=2,
        )

    if cfg.linear_method == "direct":
        system = interior_system(grid, s, q)
        u0 = system.solve(None, f)
        lin = lambda src: system.solve(src, None)  # noqa: E731
    else:
        u0 = solve_dirichlet(LinearProblem(grid, s, q, None, f), tol=cfg.linear_tol).solution
        lin = lambda src: solve_dirichlet(  # noqa: E731
            LinearProblem(grid, s, q, src, None), tol=cfg.linear_tol
        ).solution

    if P.is_zero:
        return SolveReport(u0, 1, nonlinear_residual(grid, s, q, P, u0), "contraction", grid.zeros())

    v = grid.zeros() if v0 is None else grid.restrict_interior(grid.check_field(v0, "v0"))
    prev_step = np.inf
    for it in range(1, cfg.max_iter + 1):
        v_new = lin(-eval_nonlinearity(grid, v + u0, P))
        size = max_norm(v_new)
        if size > cfg.delta:
            raise ContractionError(
                f"contraction ball violated: |v|_inf={size:.3e} > delta={cfg.delta}",
                residual=size,
                iterations=it,
            )
        step = max_norm(v_new - v)
        v = v_new
        # stop once below tol and either relatively tiny or stalled at roundoff
        if step < cfg.tol and (step <= cfg.rtol * size or step >= prev_step):
            break
        prev_step = step
    else:
        if step >= cfg.tol:
            u = u0 + v
            raise ConvergenceError(
                f"contraction iteration did not converge in {cfg.max_iter} iterations",
                residual=nonlinear_residual(grid, s, q, P, u),
                iterations=cfg.max_iter,
            )
    u = u0 + v
    return SolveReport(u, it, nonlinear_residual(grid, s, q, P, u), "contraction", v)


@dataclass
class SmallnessReport:
    coefficient_sum: float
    operator_bound: float
    delta: float
    eps0: float
    invariance_lhs: float
    contraction_lhs: float
    holds: bool
    delta_star: Optional[float]
    data_norm: float
    data_small: bool
    details: dict = field(default_factory=dict)


def _invariance_poly(K: int, C: float, Cp: float, eps0: float) -> np.poly1d:
    """C*C' * sum_{j=1}^{K-1} (d + eps0)^{j+1} - d as a polynomial in d."""
    t = np.poly1d([1.0, eps0])
    poly = np.poly1d([0.0])
    for j in range(1, K):
        poly = poly + C * Cp * t ** (j + 1)
    return poly - np.poly1d([1.0, 0.0])


def invariance_lhs(K: int, C: float, Cp: float, delta: float, eps0: float) -> float:
    return C * Cp * sum((delta + eps0) ** (j + 1) for j in range(1, K))


def contraction_lhs(K: int, C: float, Cp: float, delta: float, eps0: float) -> float:
    return C * Cp * K * sum((delta + eps0) ** j for j in range(1, K))


def smallest_admissible_delta(K: int, C: float, Cp: float, eps0: float) -> Optional[float]:
    """Smallest positive delta where the invariance inequality becomes strict."""
    if C * Cp == 0:
        return 0.0
    roots = _invariance_poly(K, C, Cp, eps0).r
    real = sorted(r.real for r in roots if abs(r.imag) < 1e-10 and r.real > 0)
    return float(real[0]) if real else None


def estimate_operator_bound(grid: GridSpec, q, P: Nonlinearity, n_probe: int = 16, seed: int = 0) -> float:
    """max over random unit sources F and |sigma| <= m of |D^sigma L^{-1} F|_inf / |F|_inf."""
    rng = np.random.default_rng(seed)
    system = interior_system(grid, P.params.s, q)
    best = 0.0
    for _ in range(n_probe):
        F = grid.restrict_interior(rng.uniform(-1, 1, grid.shape))
        F /= max(max_norm(F), 1e-300)
        w = system.solve(F, None)
        for sigma in P.params.sigmas():
            best = max(best, max_norm(partial_derivative(grid, w, sigma, P.params.derivative)))
    return best


def check_smallness(
    grid: GridSpec,
    f,
    P: Nonlinearity,
    q,
    cfg: ContractionConfig = ContractionConfig(),
    operator_bound: Optional[float] = None,
    seed: int = 0,
) -> SmallnessReport:
    """Discrete surrogate of the smallness conditions for the contraction argument."""
    K = P.params.K
    Cp = P.coefficient_sum()
    C = estimate_operator_bound(grid, q, P, seed=seed) if operator_bound is None else float(operator_bound)
    inv = invariance_lhs(K, C, Cp, cfg.delta, cfg.eps0)
    con = contraction_lhs(K, C, Cp, cfg.delta, cfg.eps0)
    fn = max_norm(f)
    holds = (Cp == 0) or (inv < cfg.delta and con < 1.0)
    return SmallnessReport(
        coefficient_sum=Cp,
        operator_bound=C,
        delta=cfg.delta,
        eps0=cfg.eps0,
        invariance_lhs=inv,
        contraction_lhs=con,
        holds=bool(holds),
        delta_star=smallest_admissible_delta(K, C, Cp, cfg.eps0),
        data_norm=fn,
        data_small=fn <= cfg.eps0,
    )
