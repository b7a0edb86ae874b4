"""Linear exterior-value problem (-Delta)^s v + q v = F in the domain, v = f outside.

The exterior condition is an exact nodal constraint, so the problem reduces to
the interior unknowns:

    (A_II + diag(q_I)) v_I = F_I - (A f)_I,

with ``A`` the circulant matrix of the multiplier |xi|^{2s}.  The reduced matrix
is symmetric positive definite whenever the exterior is nonempty and q >= 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import CoercivityError, ConsistencyError, ConvergenceError, GridError, ParameterError
from .grid import GridSpec, max_norm
from .operators import frac_laplacian

__all__ = [
    "LinearProblem",
    "SolveReport",
    "InteriorSystem",
    "interior_system",
    "solve_dirichlet",
    "dense_oracle_solve",
    "residual_norm",
    "solve_homogeneous",
    "solve_source",
]

DENSE_CAP = 4096
Q_TOL = 1e-12


@dataclass
class LinearProblem:
    grid: GridSpec
    s: float
    q: np.ndarray
    F: Optional[np.ndarray] = None
    f: Optional[np.ndarray] = None

    def __post_init__(self):
        g = self.grid
        self.q = g.restrict_interior(g.check_field(self.q, "q"))
        if np.any(self.q[g.omega_mask] < -Q_TOL):
            raise CoercivityError("loss of coercivity: q < 0 on the domain")
        self.F = g.zeros() if self.F is None else g.restrict_interior(g.check_field(self.F, "F"))
        self.f = g.zeros() if self.f is None else g.restrict_exterior(g.check_field(self.f, "f"))
        if self.s <= 0:
            raise ParameterError("s must be positive")

    @property
    def scale(self) -> float:
        return 1.0 + max_norm(self.F) + max_norm(self.f)


@dataclass
class SolveReport:
    solution: np.ndarray
    iterations: int
    residual_norm: float
    method: str
    correction: Optional[np.ndarray] = None


def residual_norm(grid: GridSpec, s: float, q, F, v) -> float:
    """max over the domain of |(-Delta)^s v + q v - F|."""
    r = frac_laplacian(grid, v, s) + q * v - F
    return max_norm(r, grid.omega_mask)


def _embed(grid: GridSpec, x_int: np.ndarray) -> np.ndarray:
    out = grid.zeros()
    out[grid.omega_mask] = x_int
    return out


def _apply_interior(p: LinearProblem, x_int: np.ndarray) -> np.ndarray:
    g = p.grid
    return frac_laplacian(g, _embed(g, x_int), p.s)[g.omega_mask] + p.q[g.omega_mask] * x_int


def _rhs(p: LinearProblem) -> np.ndarray:
    g = p.grid
    return (p.F - frac_laplacian(g, p.f, p.s))[g.omega_mask]


def _assemble(p: LinearProblem, x_int: np.ndarray) -> np.ndarray:
    out = p.f.copy()
    out[p.grid.omega_mask] = x_int
    return out


def _cg(p: LinearProblem, b: np.ndarray, tol: float, max_iter: int, precondition: bool):
    """Conjugate gradients with a max-norm stopping rule on the reduced residual."""
    g = p.grid
    threshold = tol * p.scale
    x = np.zeros_like(b)
    r = b.copy()
    if max_norm(r) <= threshold:
        return x, 0, max_norm(r)
    if precondition:
        diag = float(np.sum(g.symbol(p.s))) / g.size + p.q[g.omega_mask]
        inv_diag = 1.0 / diag
    else:
        inv_diag = None
    z = r * inv_diag if precondition else r
    d = z.copy()
    rz = float(r @ z)
    for it in range(1, max_iter + 1):
        Ad = _apply_interior(p, d)
        alpha = rz / float(d @ Ad)
        x += alpha * d
        r -= alpha * Ad
        if max_norm(r) <= threshold:
            # confirm against the true residual to avoid drift
            r_true = b - _apply_interior(p, x)
            if max_norm(r_true) <= threshold:
                return x, it, max_norm(r_true)
            r = r_true
        z = r * inv_diag if precondition else r
        rz_new = float(r @ z)
        d = z + (rz_new / rz) * d
        rz = rz_new
    raise ConvergenceError(
        f"conjugate gradients did not converge in {max_iter} iterations",
        residual=max_norm(b - _apply_interior(p, x)),
        iterations=max_iter,
    )


class InteriorSystem:
    """Cholesky-factored reduced matrix for repeated solves with fixed (s, q)."""

    def __init__(self, grid: GridSpec, s: float, q):
        self.grid = grid
        self.s = float(s)
        self.q = grid.restrict_interior(grid.check_field(q, "q"))
        if np.any(self.q[grid.omega_mask] < -Q_TOL):
            raise CoercivityError("loss of coercivity: q < 0 on the domain")
        if grid.n_interior > DENSE_CAP:
            raise GridError(f"{grid.n_interior} interior nodes exceed the dense cap {DENSE_CAP}")
        self.matrix = self._circulant_block() + np.diag(self.q[grid.omega_mask])
        try:
            self._factor = scipy.linalg.cho_factor(self.matrix, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ConsistencyError(f"interior matrix is not positive definite: {exc}") from exc

    def _circulant_block(self) -> np.ndarray:
        g = self.grid
        col = np.fft.ifftn(g.symbol(self.s)).real
        idx = np.array(np.nonzero(g.omega_mask)).T
        diff = (idx[:, None, :] - idx[None, :, :]) % g.points_per_dim
        return col[tuple(diff[..., a] for a in range(g.dim))]

    def solve_interior(self, b: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve(self._factor, b)

    def solve(self, F=None, f=None) -> np.ndarray:
        p = LinearProblem(self.grid, self.s, self.q, F, f)
        return _assemble(p, self.solve_interior(_rhs(p)))


def interior_system(grid: GridSpec, s: float, q) -> InteriorSystem:
    """Cached factorization per (grid, s, q)."""
    q = np.ascontiguousarray(grid.restrict_interior(grid.check_field(q, "q")))
    key = ("isys", float(s), q.tobytes())
    cache = grid._cache.setdefault("isys_store", {})
    if key not in cache:
        if len(cache) >= 8:
            cache.pop(next(iter(cache)))
        cache[key] = InteriorSystem(grid, s, q)
    return cache[key]


def solve_dirichlet(
    p: LinearProblem,
    tol: float = 1e-10,
    max_iter: int = 5000,
    method: str = "iterative",
    precondition: bool = False,
) -> SolveReport:
    """Solve the linear exterior-value problem.

    ``method`` is ``iterative`` (conjugate gradients on interior unknowns) or
    ``direct`` (cached Cholesky factor of the reduced matrix).
    """
    if tol <= 0:
        raise ParameterError("tol must be positive")
    g = p.grid
    b = _rhs(p)
    if method == "iterative":
        x, iters, _ = _cg(p, b, tol, max_iter, precondition)
    elif method == "direct":
        x = interior_system(g, p.s, p.q).solve_interior(b)
        iters = 1
    else:
        raise ParameterError(f"unknown method {method!r}")
    v = _assemble(p, x)
    return SolveReport(v, iters, residual_norm(g, p.s, p.q, p.F, v), method)


def dense_oracle_solve(p: LinearProblem) -> SolveReport:
    """Assemble the reduced matrix column by column from node indicators and LU-solve it."""
    g = p.grid
    n = g.n_interior
    if n > DENSE_CAP:
        raise GridError(f"{n} interior nodes exceed the dense cap {DENSE_CAP}")
    M = np.empty((n, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        M[:, j] = _apply_interior(p, e)
        e[j] = 0.0
    try:
        x = scipy.linalg.lu_solve(scipy.linalg.lu_factor(M, check_finite=True), _rhs(p))
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ConsistencyError(f"dense factorization failed: {exc}") from exc
    v = _assemble(p, x)
    return SolveReport(v, 1, residual_norm(g, p.s, p.q, p.F, v), "dense")


def solve_homogeneous(grid: GridSpec, s: float, q, f, method: str = "direct", tol: float = 1e-12):
    """Solution with exterior data ``f`` and zero source."""
    if method == "direct":
        return interior_system(grid, s, q).solve(None, f)
    return solve_dirichlet(LinearProblem(grid, s, q, None, f), tol=tol).solution


def solve_source(grid: GridSpec, s: float, q, F, method: str = "direct", tol: float = 1e-12):
    """Exterior-zero solution of (-Delta)^s w + q w = F on the domain."""
    if method == "direct":
        return interior_system(grid, s, q).solve(F, None)
    return solve_dirichlet(LinearProblem(grid, s, q, F, None), tol=tol).solution
