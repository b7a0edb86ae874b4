"""Higher-order linearization: the T_alpha cascade, expansion aggregates, FD extraction.

For data eps . f = sum_l eps_l f_l the solution u_eps has Taylor coefficients
w_alpha solving [(-Delta)^s + q] w_alpha = -T_alpha, where T_alpha collects
products of lower-order w_beta:

    T_alpha = sum_{l=1}^{|alpha|-1} sum_{(beta_1..beta_l, gamma)}
              alpha! / (beta_1! ... beta_l! gamma!) (prod_j w_{beta_j}) P_l(x,D) w_gamma,

the inner sum running over ordered tuples of nonzero multi-indices adding to alpha.
"""

from __future__ import annotations

import itertools
from math import prod
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .errors import ConsistencyError, ParameterError
from .grid import GridSpec, max_norm
from .linear_solver import interior_system, solve_dirichlet, LinearProblem, residual_norm
from .multiindex import (
    compositions,
    mi_factorial,
    multi_indices,
    of_order,
    order,
    ordered_decompositions,
    sub_indices,
    unit,
)
from .nonlinear_solver import ContractionConfig, solve_nlfse
from .operators import Nonlinearity, apply_Pk, eval_nonlinearity

__all__ = [
    "LinearizationState",
    "ExpansionAggregates",
    "compute_T_alpha",
    "compute_cascade",
    "cascade_residuals",
    "expansion",
    "build_aggregates",
    "T_k_product_form",
    "aggregate_check",
    "fd_derivative",
    "remainder_study",
    "fit_slope",
    "FD_CONFIG",
]

# tight contraction settings: mixed differences divide by eps_step^|alpha|
FD_CONFIG = ContractionConfig(delta=0.5, eps0=1.0, tol=1e-13, max_iter=500, rtol=1e-16)


@dataclass
class LinearizationState:
    """Per-alpha storage of T_alpha and w_alpha.

    ``data`` holds one exterior field per epsilon slot.  ``first_order``
    optionally prescribes w_{e_l} directly (interior test functions); the
    default solves the homogeneous problem with data f_l.
    """

    grid: GridSpec
    q: np.ndarray
    P: Nonlinearity
    data: List[np.ndarray]
    first_order: Optional[List[np.ndarray]] = None
    method: str = "direct"
    w: Dict[tuple, np.ndarray] = field(default_factory=dict)
    T: Dict[tuple, np.ndarray] = field(default_factory=dict)
    _pw: Dict[tuple, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        g = self.grid
        self.q = g.restrict_interior(g.check_field(self.q, "q"))
        self.data = [g.restrict_exterior(g.check_field(f, "f")) for f in self.data]
        if self.first_order is not None:
            if len(self.first_order) != len(self.data):
                raise ParameterError("first_order must have one field per slot")
            self.first_order = [g.check_field(h, "h") for h in self.first_order]
        zero = tuple(0 for _ in self.data)
        self.w.setdefault(zero, g.zeros())
        self.T.setdefault(zero, g.zeros())

    @property
    def n_slots(self) -> int:
        return len(self.data)

    @property
    def s(self) -> float:
        return self.P.params.s

    def Pw(self, ell: int, gamma: tuple) -> np.ndarray:
        key = (ell, gamma)
        if key not in self._pw:
            self._pw[key] = apply_Pk(self.grid, self.w[gamma], ell, self.P)
        return self._pw[key]

    def linear_solve(self, F=None, f=None) -> np.ndarray:
        if self.method == "direct":
            return interior_system(self.grid, self.s, self.q).solve(F, f)
        return solve_dirichlet(LinearProblem(self.grid, self.s, self.q, F, f), tol=1e-12).solution


@dataclass
class ExpansionAggregates:
    eps: np.ndarray
    u_eps: np.ndarray
    V: Dict[int, np.ndarray]
    U: Dict[int, np.ndarray]
    T: Dict[int, np.ndarray]
    Ttilde: Dict[int, np.ndarray]
    R: np.ndarray
    data_norm: float


def compute_T_alpha(alpha: Sequence[int], state: LinearizationState) -> np.ndarray:
    """Inhomogeneity T_alpha from the stored lower-order w_beta."""
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != state.n_slots:
        raise ParameterError(f"alpha {alpha} has wrong length for {state.n_slots} slots")
    g = state.grid
    n = order(alpha)
    if n <= 1:
        return g.zeros()
    missing = [b for b in sub_indices(alpha, proper=True) if order(b) > 0 and b not in state.w]
    if missing:
        raise ParameterError(f"missing prerequisite w_beta for beta in {missing}")
    a_fact = mi_factorial(alpha)
    out = g.zeros()
    for ell in range(1, min(n - 1, state.P.params.K - 1) + 1):
        if not state.P.level(ell):
            continue
        for parts in ordered_decompositions(alpha, ell + 1):
            *betas, gamma = parts
            weight = a_fact // prod(mi_factorial(b) for b in parts)
            term = state.Pw(ell, gamma)
            for b in betas:
                term = term * state.w[b]
            out += weight * term
    return g.restrict_interior(out)


def _needed(state: LinearizationState, up_to: int, targets: Optional[Iterable[Sequence[int]]]) -> list:
    if targets is None:
        return multi_indices(state.n_slots, up_to, 1)
    need = set()
    for t in targets:
        need.update(b for b in sub_indices(tuple(t)) if order(b) >= 1)
    return sorted(need, key=lambda b: (order(b), tuple(-x for x in b)))


def compute_cascade(
    state: LinearizationState,
    up_to: Optional[int] = None,
    targets: Optional[Iterable[Sequence[int]]] = None,
) -> LinearizationState:
    """Fill w_alpha and T_alpha in increasing |alpha|.

    With ``targets`` only the sub-indices of the listed multi-indices are
    computed; otherwise every alpha with 1 <= |alpha| <= up_to (default K).
    """
    K = state.P.params.K
    up_to = K if up_to is None else int(up_to)
    if up_to > max(K, state.n_slots) and targets is None:
        raise ParameterError(f"up_to={up_to} exceeds K={K}")
    for alpha in _needed(state, up_to, targets):
        if alpha in state.w:
            continue
        if order(alpha) == 1:
            ell = alpha.index(1)
            state.T[alpha] = state.grid.zeros()
            if state.first_order is not None:
                state.w[alpha] = state.first_order[ell].copy()
            else:
                state.w[alpha] = state.linear_solve(None, state.data[ell])
        else:
            T = compute_T_alpha(alpha, state)
            state.T[alpha] = T
            state.w[alpha] = state.linear_solve(-T, None)
    return state


def cascade_residuals(state: LinearizationState) -> Dict[tuple, float]:
    """max |(-Delta)^s w_alpha + q w_alpha + T_alpha| over the domain, for |alpha| >= 2."""
    return {
        a: residual_norm(state.grid, state.s, state.q, -state.T[a], w)
        for a, w in state.w.items()
        if order(a) >= 2
    }


def _eps_power(eps: np.ndarray, alpha: tuple) -> float:
    return float(np.prod([e**a for e, a in zip(eps, alpha)]))


def V_k(state: LinearizationState, eps, k: int) -> np.ndarray:
    eps = np.asarray(eps, dtype=float)
    out = state.grid.zeros()
    for alpha in of_order(state.n_slots, k):
        out += _eps_power(eps, alpha) * state.w[alpha] / mi_factorial(alpha)
    return out


def T_k_stored(state: LinearizationState, eps, k: int) -> np.ndarray:
    eps = np.asarray(eps, dtype=float)
    out = state.grid.zeros()
    for alpha in of_order(state.n_slots, k):
        out += _eps_power(eps, alpha) * state.T[alpha] / mi_factorial(alpha)
    return out


def T_k_product_form(state: LinearizationState, eps, k: int) -> np.ndarray:
    """T_k = sum_l sum over compositions gamma of k into l+1 parts of (prod V_gamma_j) P_l V_gamma_{l+1}."""
    g = state.grid
    V = {j: V_k(state, eps, j) for j in range(1, k)}
    out = g.zeros()
    for ell in range(1, min(k - 1, state.P.params.K - 1) + 1):
        for gam in compositions(k, ell + 1):
            prod = apply_Pk(g, V[gam[-1]], ell, state.P)
            for j in gam[:-1]:
                prod = prod * V[j]
            out += prod
    return g.restrict_interior(out)


def expansion(state: LinearizationState, eps, up_to: Optional[int] = None) -> np.ndarray:
    """sum_{1 <= |alpha| <= up_to} eps^alpha w_alpha / alpha!."""
    up_to = state.P.params.K if up_to is None else up_to
    return sum((V_k(state, eps, k) for k in range(1, up_to + 1)), state.grid.zeros())


def build_aggregates(
    state: LinearizationState, eps, u_eps: np.ndarray, up_to: Optional[int] = None
) -> ExpansionAggregates:
    """V_k, U_k, T_k, T~_k and R = U_K for one epsilon vector."""
    eps = np.asarray(eps, dtype=float)
    K = state.P.params.K if up_to is None else up_to
    V = {k: V_k(state, eps, k) for k in range(1, K + 1)}
    U = {0: np.asarray(u_eps, dtype=float)}
    for k in range(K):
        U[k + 1] = U[k] - V[k + 1]
    T = {k: T_k_stored(state, eps, k) for k in range(0, K + 1)}
    Pu = eval_nonlinearity(state.grid, u_eps, state.P)
    Ttilde = {}
    acc = state.grid.zeros()
    for k in range(0, K + 1):
        acc = acc + T[k]
        Ttilde[k] = Pu - acc
    data = sum((e * f for e, f in zip(eps, state.data)), state.grid.zeros())
    return ExpansionAggregates(eps, U[0], V, U, T, Ttilde, U[K], max_norm(data))


def fit_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of log y against log x."""
    x = np.log(np.asarray(x, dtype=float))
    y = np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def _solve_u(state: LinearizationState, eps, cfg: ContractionConfig) -> np.ndarray:
    f = sum((e * d for e, d in zip(eps, state.data)), state.grid.zeros())
    return solve_nlfse(state.grid, state.q, state.P, f, cfg).solution


@dataclass
class RemainderStudy:
    rows: list
    slope: float
    residuals: list


def remainder_study(
    state: LinearizationState,
    eps_list: Sequence[Sequence[float]],
    cfg: ContractionConfig = FD_CONFIG,
) -> RemainderStudy:
    """Rows (|eps.f|_inf, |R_eps|_inf) and the fitted log-log slope."""
    K = state.P.params.K
    compute_cascade(state, K)
    rows, residuals = [], []
    for eps in eps_list:
        agg = build_aggregates(state, eps, _solve_u(state, eps, cfg))
        rows.append((agg.data_norm, max_norm(agg.R)))
        # R solves the linear problem with source -T~_K and zero exterior data
        residuals.append(residual_norm(state.grid, state.s, state.q, -agg.Ttilde[K], agg.R))
    x, y = zip(*rows)
    slope = fit_slope(x, y) if min(y) > 0 else float("inf")
    return RemainderStudy(rows, slope, residuals)


@dataclass
class AggregateDiagnostics:
    max_T_mismatch: float
    T_mismatch: Dict[int, float]
    V_slopes: Dict[int, float]
    U_slopes: Dict[int, float]
    T2_closed_form_mismatch: float


def aggregate_check(
    state: LinearizationState,
    eps,
    scales: Sequence[float] = (1.0, 0.5, 0.25, 0.125, 0.0625),
    cfg: ContractionConfig = FD_CONFIG,
    tol: float = 1e-10,
) -> AggregateDiagnostics:
    """Compare the two T_k computations and fit V_k / U_k orders along eps*scale."""
    K = state.P.params.K
    compute_cascade(state, K)
    eps = np.asarray(eps, dtype=float)
    g = state.grid
    mism = {}
    for k in range(2, K + 1):
        a = T_k_stored(state, eps, k)
        b = T_k_product_form(state, eps, k)
        mism[k] = max_norm(a - b) / max(max_norm(a), max_norm(b), 1e-300)
    V1 = V_k(state, eps, 1)
    T2 = T_k_stored(state, eps, 2)
    closed = V1 * apply_Pk(g, V1, 1, state.P) if K >= 2 else g.zeros()
    t2_mis = max_norm(T2 - closed) / max(max_norm(T2), 1e-300)
    worst = max([*mism.values(), t2_mis])
    if worst > tol:
        raise ConsistencyError(f"T_k computations disagree: relative mismatch {worst:.3e}")

    norms, V_norms, U_norms = [], {k: [] for k in range(1, K + 1)}, {k: [] for k in range(0, K + 1)}
    for sc in scales:
        agg = build_aggregates(state, sc * eps, _solve_u(state, sc * eps, cfg))
        norms.append(agg.data_norm)
        for k in V_norms:
            V_norms[k].append(max_norm(agg.V[k]))
        for k in U_norms:
            U_norms[k].append(max_norm(agg.U[k]))
    V_slopes = {k: fit_slope(norms, v) for k, v in V_norms.items() if min(v) > 0}
    U_slopes = {k: fit_slope(norms, u) for k, u in U_norms.items() if min(u) > 0}
    return AggregateDiagnostics(worst, mism, V_slopes, U_slopes, t2_mis)


def fd_derivative(
    alpha: Sequence[int],
    data: Sequence[np.ndarray],
    eps_step: float,
    grid: GridSpec,
    q,
    P: Nonlinearity,
    cfg: ContractionConfig = FD_CONFIG,
    richardson: bool = False,
) -> np.ndarray:
    """Mixed one-sided difference of eps -> u_eps at 0 approximating w_alpha (binary alpha)."""
    alpha = tuple(int(a) for a in alpha)
    if any(a not in (0, 1) for a in alpha):
        raise ParameterError("fd_derivative supports binary alpha only")
    if len(alpha) != len(data):
        raise ParameterError("alpha and data lengths differ")
    if eps_step <= 0:
        raise ParameterError("eps_step must be positive")
    support = [i for i, a in enumerate(alpha) if a]
    if not support:
        return grid.zeros()

    def stencil(h: float) -> np.ndarray:
        # u_eps = u0 + v with u0 linear in eps: its mixed difference is exact,
        # so only the nonlinear correction v is differenced
        acc = grid.zeros()
        for r in range(1, len(support) + 1):
            for S in itertools.combinations(support, r):
                f = sum((h * data[i] for i in S), grid.zeros())
                acc += (-1) ** (len(support) - r) * solve_nlfse(grid, q, P, f, cfg).correction
        acc /= h ** len(support)
        if len(support) == 1:
            acc += interior_system(grid, P.params.s, q).solve(None, data[support[0]])
        return acc

    if richardson:
        return 2.0 * stencil(eps_step / 2) - stencil(eps_step)
    return stencil(eps_step)


def first_order_index(n_slots: int, ell: int) -> tuple:
    return unit(n_slots, ell)
