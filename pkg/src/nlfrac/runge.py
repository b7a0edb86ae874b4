"""Regularized exterior control: data in a window whose solution approximates an interior target.

Minimizes |S f - h|^2_{L2(Omega)} + lam * |f|^2 over f supported in W, where
S f is the restriction to the domain of the q-solution with exterior data f.
The normal equations are solved by conjugate gradients using applications of
S and its adjoint only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConvergenceError, GridError, ParameterError
from .grid import GridSpec
from .linear_solver import interior_system
from .operators import apply_multiplier, frac_laplacian

__all__ = ["RungeResult", "RungeOperator", "runge_control", "lambda_sweep"]


@dataclass
class RungeResult:
    f: np.ndarray
    achieved_err: float
    iterations: int
    normal_residual: float
    lam: float
    realized: np.ndarray


class RungeOperator:
    """S: window values -> interior values of the homogeneous solution, with its adjoint."""

    def __init__(self, grid: GridSpec, W_mask, q, s: float, penalty: str = "l2"):
        self.grid = grid
        self.W = np.asarray(W_mask, dtype=bool)
        if not self.W.any():
            raise GridError("control window is empty")
        if np.any(self.W & grid.omega_mask):
            raise GridError("control window overlaps the domain")
        self.s = float(s)
        self.system = interior_system(grid, s, q)
        if penalty not in ("l2", "sobolev"):
            raise ParameterError("penalty must be 'l2' or 'sobolev'")
        self.penalty = penalty

    def embed_w(self, x: np.ndarray) -> np.ndarray:
        out = self.grid.zeros()
        out[self.W] = x
        return out

    def apply(self, x: np.ndarray) -> np.ndarray:
        g = self.grid
        b = -frac_laplacian(g, self.embed_w(x), self.s)[g.omega_mask]
        return self.system.solve_interior(b)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        g = self.grid
        z = g.zeros()
        z[g.omega_mask] = self.system.solve_interior(y)
        return -frac_laplacian(g, z, self.s)[self.W]

    def regularizer(self, x: np.ndarray) -> np.ndarray:
        if self.penalty == "l2":
            return x
        weight = (1.0 + self.grid.xi_squared()) ** self.s
        return apply_multiplier(self.grid, self.embed_w(x), weight)[self.W]

    def realize(self, f: np.ndarray) -> np.ndarray:
        return self.system.solve(None, f)


def _cgne(op: RungeOperator, h_int: np.ndarray, lam: float, tol: float, max_iter: int, x0=None):
    rhs = op.adjoint(h_int)
    scale = max(float(np.linalg.norm(rhs)), 1e-300)
    normal = lambda x: op.adjoint(op.apply(x)) + lam * op.regularizer(x)  # noqa: E731
    x = np.zeros(op.W.sum()) if x0 is None else x0.copy()
    r = rhs - normal(x)
    d = r.copy()
    rr = float(r @ r)
    it = 0
    while np.sqrt(rr) > tol * scale:
        if it >= max_iter:
            raise ConvergenceError(
                f"normal-equation CG did not converge in {max_iter} iterations",
                residual=np.sqrt(rr) / scale,
                iterations=it,
            )
        it += 1
        Nd = normal(d)
        a = rr / float(d @ Nd)
        x += a * d
        r -= a * Nd
        rr_new = float(r @ r)
        d = r + (rr_new / rr) * d
        rr = rr_new
    res = float(np.linalg.norm(rhs - normal(x))) / scale
    return x, it, res


def runge_control(
    grid: GridSpec,
    target_h,
    W_mask,
    q,
    s: float,
    lam: float = 1e-8,
    cg_tol: float = 1e-10,
    cg_max: int = 10000,
    penalty: str = "l2",
    x0: Optional[np.ndarray] = None,
) -> RungeResult:
    """Tikhonov-regularized control f in W with v_f close to ``target_h`` on the domain."""
    if lam <= 0:
        raise ParameterError("lambda must be positive")
    op = RungeOperator(grid, W_mask, q, s, penalty)
    h = grid.check_field(target_h, "target_h")
    h_int = h[grid.omega_mask]
    hn = float(np.linalg.norm(h_int))
    if hn == 0:
        return RungeResult(grid.zeros(), 0.0, 0, 0.0, lam, grid.zeros())
    x, it, res = _cgne(op, h_int, lam, cg_tol, cg_max, x0)
    f = op.embed_w(x)
    realized = op.realize(f)
    err = float(np.linalg.norm(realized[grid.omega_mask] - h_int)) / hn
    return RungeResult(f, err, it, res, lam, realized)


def lambda_sweep(
    grid: GridSpec,
    target_h,
    W_mask,
    q,
    s: float,
    lambda_grid: Sequence[float],
    cg_tol: float = 1e-10,
    cg_max: int = 10000,
    penalty: str = "l2",
) -> list:
    """Rows (lambda, achieved_err, |f|) along a descending lambda path, warm-started."""
    lams = [float(v) for v in lambda_grid]
    if any(b > a for a, b in zip(lams, lams[1:])):
        raise ParameterError("lambda_grid must be descending")
    rows, x0 = [], None
    for lam in lams:
        res = runge_control(grid, target_h, W_mask, q, s, lam, cg_tol, cg_max, penalty, x0)
        x0 = res.f[np.asarray(W_mask, dtype=bool)]
        rows.append((lam, res.achieved_err, float(np.sqrt(grid.cell_volume) * np.linalg.norm(res.f))))
    return rows
