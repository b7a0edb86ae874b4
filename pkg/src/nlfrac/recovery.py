"""Inverse pipeline: recover q, then the coefficients a_{sigma,k-1} level by level.

Two modes share the same linear-algebra core:

* ``oracle``: first-order fields are prescribed interior functions and the
  measured functionals come from the true cascade, so the identities hold to
  rounding error.
* ``exterior``: first-order fields are solutions driven by exterior controls
  (built by Runge control) and measurements are finite differences of the DN
  map returned by a :class:`Simulator`.

In both modes the rows of the recovery systems are assembled from the realized
discrete fields, so the only error sources are the measurement error, the
error in already recovered quantities and the regularization.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from math import factorial
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import BudgetError, ConsistencyError, ContractionRegimeWarning, LocalizationError, ParameterError
from .grid import GridSpec, inner_product, l2_norm
from .linear_solver import interior_system
from .linearization import LinearizationState, compute_cascade
from .multiindex import derivative_indices, order, permutation_diagonal_count
from .nonlinear_solver import ContractionConfig
from .operators import FracParams, Nonlinearity, bilinear_form, partial_derivative
from .dn_map import dn_derivative, dn_pair
from .runge import runge_control
from .shapes import cosine_bump, monomial, node_delta, omega_bounds, plateau, shrunk_region

__all__ = [
    "Simulator",
    "RecoveryConfig",
    "RecoveryTask",
    "RecoveryReport",
    "t_functional",
    "product_field",
    "recover_q",
    "measure_T_functional",
    "recover_a_level",
    "run_full_recovery",
    "make_task",
]

MEASURE_CONFIG = ContractionConfig(delta=0.5, eps0=1e6, tol=1e-14, max_iter=500, rtol=1e-16)


# measurement side ---------------------------------------------------------


def t_functional(grid: GridSpec, q, P: Nonlinearity, h_list, tests) -> np.ndarray:
    """int_Omega T_alpha t for alpha = (1,...,1), first-order fields prescribed as ``h_list``."""
    k = len(h_list)
    alpha = (1,) * k
    state = LinearizationState(grid, q, P, [grid.zeros()] * k, first_order=list(h_list))
    compute_cascade(state, targets=[alpha])
    T = state.T[alpha]
    return np.array([inner_product(grid, T, t, grid.omega_mask) for t in tests])


class Simulator:
    """Measurement interface around a hidden truth (q*, P*).

    ``dn_pair`` and ``dn_derivative`` are the physical measurements.  The
    ``oracle_*`` methods evaluate the interior functionals directly and are
    used only in oracle mode; ``truth`` is for error reporting.
    """

    def __init__(self, grid: GridSpec, q_true, P_true: Nonlinearity, cfg: ContractionConfig = MEASURE_CONFIG):
        self.grid = grid
        self._q = grid.restrict_interior(grid.check_field(q_true, "q"))
        self._P = P_true
        self.cfg = cfg
        self.n_solves = 0

    @property
    def params(self) -> FracParams:
        return self._P.params

    def dn_pair(self, f, g) -> float:
        self.n_solves += 1
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ContractionRegimeWarning)
            return dn_pair(self.grid, f, g, self._q, self._P, self.cfg)

    def dn_derivative(self, alpha, f_list, g_list, eps_step: float) -> np.ndarray:
        k = sum(alpha)
        self.n_solves += 2**k - 1
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ContractionRegimeWarning)
            return dn_derivative(alpha, f_list, list(g_list), eps_step, self.grid, self._q, self._P, self.cfg)

    def oracle_q_functional(self, h1, tests, q_ref) -> np.ndarray:
        s = self.params.s
        return np.array(
            [bilinear_form(self.grid, h1, t, self._q, None, s) - bilinear_form(self.grid, h1, t, q_ref, None, s)
             for t in tests]
        )

    def oracle_T_functional(self, h_list, tests) -> np.ndarray:
        return t_functional(self.grid, self._q, self._P, h_list, tests)

    def truth(self):
        return self._q.copy(), self._P


# configuration -------------------------------------------------------------


@dataclass
class RecoveryConfig:
    margin: float = 0.15
    plateau_frac: float = 0.10
    bump_kind: Optional[str] = None
    bump_count: int = 16
    bump_radius: Optional[float] = None
    origin: Optional[Sequence[float]] = None
    gs_sweeps: int = 4
    ridge: Optional[float] = None
    smooth_weight: float = 100.0
    eps_step: float = 1e-3
    born_iters: int = 6
    runge_lambda: float = 1e-10
    runge_cg_tol: float = 1e-10
    runge_cg_max: int = 20000
    budget_ceiling: float = 1.0
    triangular_tol: float = 1e-6
    probe_width: Optional[float] = None
    q_reference: float = 0.0

    def __post_init__(self):
        if self.gs_sweeps < 1 or self.born_iters < 1:
            raise ParameterError("gs_sweeps and born_iters must be >= 1")
        if self.eps_step <= 0 or self.runge_lambda <= 0:
            raise ParameterError("eps_step and runge_lambda must be positive")


@dataclass
class RecoveryTask:
    grid: GridSpec
    params: FracParams
    mode: str
    source: Simulator
    recovery_region: np.ndarray
    bump_family: List[np.ndarray]
    chi: np.ndarray
    config: RecoveryConfig = field(default_factory=RecoveryConfig)
    bump_centers: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mode not in ("oracle", "exterior"):
            raise ParameterError("mode must be 'oracle' or 'exterior'")
        R = np.asarray(self.recovery_region, dtype=bool)
        if np.any(R & ~self.grid.omega_mask):
            raise ParameterError("recovery region must lie inside the domain")
        self.recovery_region = R
        for b in self.bump_family:
            if np.any(b < 0):
                raise ParameterError("bump functions must be nonnegative")
            if abs(inner_product(self.grid, b, np.ones_like(b)) - 1.0) > 1e-10:
                raise ParameterError("bump functions must integrate to 1")
            if np.any(b[self.grid.exterior_mask]):
                raise ParameterError("bump functions must be interior-supported")

    @property
    def origin(self) -> np.ndarray:
        if self.config.origin is not None:
            return np.broadcast_to(np.asarray(self.config.origin, float), (self.grid.dim,))
        lo, hi = omega_bounds(self.grid)
        return 0.5 * (lo + hi)


def make_task(
    grid: GridSpec,
    simulator: Simulator,
    mode: str = "oracle",
    config: Optional[RecoveryConfig] = None,
) -> RecoveryTask:
    """Task with the default recovery region, plateau cutoff and bump family."""
    cfg = RecoveryConfig() if config is None else config
    kind = cfg.bump_kind or ("delta" if mode == "oracle" else "cosine")
    R = shrunk_region(grid, cfg.margin)
    pts = [x[R] for x in grid.coords()]
    r_lo = np.array([p.min() for p in pts])
    r_hi = np.array([p.max() for p in pts])
    lo, hi = omega_bounds(grid)
    width = cfg.plateau_frac * float(np.min(hi - lo))

    if kind == "delta":
        idx = np.argwhere(R)
        bumps = [node_delta(grid, tuple(i)) for i in idx]
        centers = np.array([[x[tuple(i)] for x in grid.coords()] for i in idx])
        radius = 0.0
    elif kind == "cosine":
        per_axis = max(1, int(round(cfg.bump_count ** (1.0 / grid.dim))))
        span = r_hi - r_lo
        radius = cfg.bump_radius or float(np.min(span)) / per_axis
        axes = [np.linspace(a + radius, b - radius, per_axis) if per_axis > 1 else np.array([(a + b) / 2])
                for a, b in zip(r_lo, r_hi)]
        centers = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, grid.dim)
        bumps = []
        for c in centers:
            b = cosine_bump(grid, c, radius, grid.omega_mask)
            bumps.append(b / inner_product(grid, b, np.ones_like(b)))
    else:
        raise ParameterError(f"unknown bump kind {kind!r}")

    # analytic plateau equal to 1 on the whole domain; its transition lies outside
    chi = plateau(grid, lo, hi, width, kind="erf")
    if np.min(chi[R]) < 1 - 1e-10:
        raise LocalizationError("plateau cutoff is not 1 on the recovery region")
    return RecoveryTask(grid, simulator.params, mode, simulator, R, bumps, chi, cfg, centers)


# linear algebra ------------------------------------------------------------


def _difference_matrix(grid: GridSpec) -> np.ndarray:
    """Nearest-neighbour differences between domain nodes (for the smoothing penalty)."""
    idx = -np.ones(grid.shape, dtype=int)
    idx[grid.omega_mask] = np.arange(grid.n_interior)
    rows = []
    for axis in range(grid.dim):
        nb = np.roll(idx, -1, axis=axis)
        both = (idx >= 0) & (nb >= 0)
        for i, j in zip(idx[both], nb[both]):
            r = np.zeros(grid.n_interior)
            r[i], r[j] = -1.0, 1.0
            rows.append(r)
    return np.array(rows) if rows else np.zeros((0, grid.n_interior))


@dataclass
class LsqResult:
    x: np.ndarray
    pinv: np.ndarray
    resolution: np.ndarray


def _regularized_solve(A: np.ndarray, y: np.ndarray, ridge: float, Dm: Optional[np.ndarray], smooth: float) -> LsqResult:
    """min |A x - y|^2 + ridge*scale*(|x|^2 + smooth*|D x|^2); min-norm least squares when ridge == 0."""
    if ridge == 0:
        pinv = np.linalg.pinv(A, rcond=1e-12)
    else:
        n = A.shape[1]
        scale = float(np.sum(A * A)) / max(n, 1)
        Rm = np.eye(n)
        if Dm is not None and Dm.size and smooth > 0:
            Rm = Rm + smooth * Dm.T @ Dm
        pinv = np.linalg.solve(A.T @ A + ridge * scale * Rm, A.T)
    x = pinv @ y
    return LsqResult(x, pinv, pinv @ A)


def product_field(grid: GridSpec, fields: Sequence[np.ndarray], sigma, method: str = "spectral") -> np.ndarray:
    """sum over permutations pi of S_k of h_{pi_1} ... h_{pi_{k-1}} D^sigma h_{pi_k}.

    Grouping by the differentiated slot gives (k-1)! sum_i D^sigma h_i prod_{j != i} h_j.
    """
    k = len(fields)
    out = grid.zeros()
    for i in range(k):
        term = partial_derivative(grid, fields[i], sigma, method)
        for j in range(k):
            if j != i:
                term = term * fields[j]
        out += term
    return factorial(k - 1) * out


def _rows(grid: GridSpec, G: np.ndarray, tests: Sequence[np.ndarray]) -> np.ndarray:
    """A[b, j] = vol * G(x_j) * t_b(x_j) over domain nodes."""
    om = grid.omega_mask
    return grid.cell_volume * np.array([G[om] * t[om] for t in tests])


def _embed(grid: GridSpec, x: np.ndarray) -> np.ndarray:
    out = grid.zeros()
    out[grid.omega_mask] = x
    return out


def _rel_err(grid: GridSpec, est, true, mask) -> float:
    num = l2_norm(grid, est - true, mask)
    den = l2_norm(grid, true, mask)
    return num / den if den > 0 else num


# reports -------------------------------------------------------------------


@dataclass
class RecoveryReport:
    mode: str
    q_hat: np.ndarray
    a_hat: Dict[tuple, np.ndarray]
    errors: Dict[str, float]
    budgets: Dict[str, float]
    diagnostics: Dict[str, object]
    levels_completed: List[int]
    aborted: Optional[str] = None

    def recompute_errors(self, grid: GridSpec, q_true, P_true: Nonlinearity, region) -> Dict[str, float]:
        out = {"q": _rel_err(grid, self.q_hat, q_true, region)}
        for (k, sigma), a in self.a_hat.items():
            out[_akey(k, sigma)] = _rel_err(grid, a, P_true.coefficient(k, sigma), region)
        return out

    def to_json(self) -> str:
        doc = {
            "mode": self.mode,
            "errors": self.errors,
            "budgets": self.budgets,
            "levels_completed": self.levels_completed,
            "aborted": self.aborted,
            "diagnostics": _jsonable(self.diagnostics),
        }
        return json.dumps(doc, sort_keys=True, indent=2)

    def error_rows(self) -> list:
        rows = []
        for key in sorted(self.errors):
            rows.append((key, self.errors[key], self.budgets.get(key, float("nan"))))
        return rows


def _akey(k: int, sigma) -> str:
    return f"a[{k},{','.join(str(int(x)) for x in sigma)}]"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


# controls ------------------------------------------------------------------


@dataclass
class _Control:
    f: np.ndarray
    achieved_err: float


def _control(task: RecoveryTask, target, window, q) -> _Control:
    cfg = task.config
    res = runge_control(
        task.grid, target, window, q, task.params.s, cfg.runge_lambda, cfg.runge_cg_tol, cfg.runge_cg_max
    )
    return _Control(res.f, res.achieved_err)


def _realize(task: RecoveryTask, f, q) -> np.ndarray:
    # reference solves need a coercive potential; estimates may dip below 0
    return interior_system(task.grid, task.params.s, np.maximum(q, 0.0)).solve(None, f)


class _ExteriorCache:
    """Controls and measurements reused across the pipeline (exterior mode)."""

    def __init__(self, task: RecoveryTask):
        g = task.grid
        q0 = np.full(g.shape, task.config.q_reference) * g.omega_mask
        self.q0 = q0
        self.test_controls = [_control(task, b / np.max(b), g.w2_mask, q0) for b in task.bump_family]
        self.target_controls: Dict[tuple, _Control] = {}

    def target(self, task: RecoveryTask, sigma) -> _Control:
        sigma = tuple(sigma)
        if sigma not in self.target_controls:
            h = task.chi * monomial(task.grid, sigma, task.origin)
            self.target_controls[sigma] = _control(task, h, task.grid.w1_mask, self.q0)
        return self.target_controls[sigma]


def _exterior_cache(task: RecoveryTask) -> _ExteriorCache:
    cache = task.__dict__.setdefault("_cache", None)
    if cache is None:
        cache = _ExteriorCache(task)
        task.__dict__["_cache"] = cache
    return cache


# q recovery ----------------------------------------------------------------


def recover_q(task: RecoveryTask):
    """Recover q on the domain from first-order DN information.

    Returns ``(q_hat, info)``; ``info`` carries the error budget and diagnostics.
    """
    g = task.grid
    cfg = task.config
    q0 = np.full(g.shape, cfg.q_reference) * g.omega_mask
    Dm = _difference_matrix(g)
    if task.mode == "oracle":
        h1 = task.chi
        y = task.source.oracle_q_functional(h1, task.bump_family, q0)
        A = _rows(g, h1, task.bump_family)
        _check_rank(A, g, task.recovery_region, cfg.ridge or 0.0)
        sol = _regularized_solve(A, y, cfg.ridge or 0.0, Dm, cfg.smooth_weight)
        q_hat = q0 + _embed(g, sol.x)
        resid = float(np.max(np.abs(A @ sol.x - y))) if y.size else 0.0
        return q_hat, {"budget": 1e-8, "residual": resid, "rows": len(y)}

    cache = _exterior_cache(task)
    eps = cfg.eps_step
    fs = [cache.target(task, (0,) * g.dim)]
    fs += [cache.target(task, sig) for sig in derivative_indices(g.dim, 1) if order(sig) == 1]
    tests = cache.test_controls
    g_data = [c.f for c in tests]
    M = np.array([task.source.dn_derivative((1,), [c.f], g_data, eps) for c in fs])
    M2 = np.array([task.source.dn_derivative((1,), [c.f], g_data, 2 * eps) for c in fs])
    fd_err = np.abs(M2 - M).ravel()

    ridge = _exterior_ridge(cfg)
    q_hat = q0.copy()
    history = []
    s = task.params.s
    for _ in range(cfg.born_iters):
        vf = [_realize(task, c.f, q_hat) for c in fs]
        vg = [_realize(task, c.f, q_hat) for c in tests]
        rows, y = [], []
        for i, c in enumerate(fs):
            Avg = [inner_product(g, _frac(g, v, s), c.f) for v in vg]
            y.extend(M[i] - np.array(Avg))
            rows.append(_rows(g, vf[i], vg))
        A = np.vstack(rows)
        y = np.asarray(y) + A @ (q_hat - q0)[g.omega_mask]
        sol = _regularized_solve(A, y, ridge, Dm, cfg.smooth_weight)
        new = q0 + _embed(g, sol.x)
        history.append(float(np.max(np.abs(new - q_hat))))
        q_hat = new
    noise = float(np.linalg.norm(sol.pinv @ fd_err))
    xn = max(float(np.linalg.norm(sol.x)), 1e-300)
    resolution = _probe_resolution(task, sol)
    runge = max(c.achieved_err for c in fs + tests)
    born = history[-1] / max(float(np.max(np.abs(q_hat))), 1e-300)
    budget = _relative_bound(noise / xn + born + runge * (noise / xn)) + resolution
    info = {
        "budget": budget,
        "budget_terms": {"fd": noise / xn, "resolution": resolution, "born": born, "runge_max_err": runge},
        "born_history": history,
        "rows": int(A.shape[0]),
    }
    return q_hat, info


def _relative_bound(b: float) -> float:
    """Error bound relative to the truth from one relative to the estimate.

    |x - x*| <= b |x| implies |x*| >= (1 - b) |x|, so the bound is b / (1 - b).
    """
    return b / (1.0 - b) if b < 1.0 else float("inf")


def _frac(g, v, s):
    from .operators import frac_laplacian

    return frac_laplacian(g, v, s)


def _check_rank(A: np.ndarray, g: GridSpec, region: np.ndarray, ridge: float) -> None:
    if not np.any(A):
        raise LocalizationError("insufficient localization: empty measurement matrix")
    if ridge == 0:
        cols = region[g.omega_mask]
        sub = A[:, cols]
        if np.linalg.matrix_rank(sub) < int(cols.sum()):
            raise LocalizationError("insufficient localization: bump matrix is rank deficient on the recovery region")


# nonlinear levels ----------------------------------------------------------


def measure_T_functional(k: int, g_list, task: RecoveryTask, h_list=None, f_list=None, eps_step=None) -> np.ndarray:
    """Measured int_Omega T_alpha v0 for alpha = e_1 + ... + e_k.

    Oracle mode evaluates the true cascade with first-order fields ``h_list``
    against the interior tests ``g_list``.  Exterior mode returns the k-th
    mixed DN derivative for data ``f_list`` paired with exterior ``g_list``.
    """
    if task.mode == "oracle":
        if h_list is None or len(h_list) != k:
            raise ParameterError("oracle mode needs k first-order fields")
        return task.source.oracle_T_functional(h_list, g_list)
    if f_list is None or len(f_list) != k:
        raise ParameterError("exterior mode needs k exterior data fields")
    eps = task.config.eps_step if eps_step is None else eps_step
    return task.source.dn_derivative((1,) * k, f_list, g_list, eps)


def _reference_P(task: RecoveryTask, known: Dict[tuple, np.ndarray], k: int) -> Nonlinearity:
    coeffs = {key: a for key, a in known.items() if key[0] <= k - 2}
    return Nonlinearity(task.params, task.grid, coeffs)


@dataclass
class LevelResult:
    fields: Dict[tuple, np.ndarray]
    budget: float
    diagnostics: dict


def recover_a_level(
    k: int,
    task: RecoveryTask,
    a_known: Dict[tuple, np.ndarray],
    q_hat,
    q_budget: float = 0.0,
    a_budget: float = 0.0,
) -> LevelResult:
    """Recover a_{sigma,k-1} for all |sigma| <= m by the triangular induction over |sigma|."""
    g = task.grid
    cfg = task.config
    params = task.params
    if not 2 <= k <= params.K:
        raise ParameterError(f"level k={k} outside 2..K")
    sigmas = derivative_indices(g.dim, params.m)
    q_hat = np.maximum(q_hat, 0.0)
    P_ref = _reference_P(task, a_known, k)
    method = params.derivative
    Dm = _difference_matrix(g)

    # first-order fields per monomial target: slot 1 carries chi (x-o)^sigma, the rest chi
    if task.mode == "oracle":
        tests = task.bump_family
        field_sets = {}
        for sig in sigmas:
            h1 = task.chi * monomial(g, sig, task.origin)
            field_sets[sig] = [h1] + [task.chi] * (k - 1)
        y = {sig: measure_T_functional(k, tests, task, h_list=field_sets[sig])
             - t_functional(g, q_hat, P_ref, field_sets[sig], tests) for sig in sigmas}
        fd_err = {sig: np.zeros_like(y[sig]) for sig in sigmas}
        ridge = cfg.ridge or 0.0
        runge = 0.0
    else:
        cache = _exterior_cache(task)
        test_data = [c.f for c in cache.test_controls]
        chi_c = cache.target(task, (0,) * g.dim)
        controls, meas, fd_err = {}, {}, {}
        runge = max(c.achieved_err for c in cache.test_controls)
        for sig in sigmas:
            ctrl = [cache.target(task, sig)] + [chi_c] * (k - 1)
            runge = max(runge, *(c.achieved_err for c in ctrl))
            controls[sig] = [c.f for c in ctrl]
            meas[sig] = measure_T_functional(k, test_data, task, f_list=controls[sig])
            m2 = measure_T_functional(k, test_data, task, f_list=controls[sig], eps_step=2 * cfg.eps_step)
            fd_err[sig] = np.abs(m2 - meas[sig])
        field_sets, tests, y = _exterior_level_system(task, q_hat, P_ref, controls, meas)
        ridge = _exterior_ridge(cfg)

    # row blocks A[(target sig, column sig')]
    A = {}
    for sig in sigmas:
        for sp in sigmas:
            A[(sig, sp)] = _rows(g, product_field(g, field_sets[sig], sp, method), tests)

    tri = _triangularity(task, k, sigmas, field_sets)
    if task.mode == "oracle" and not tri["ok"]:
        raise ConsistencyError(f"triangularity check failed at level k={k}: {tri['worst']}")

    # block Gauss-Seidel over |sigma| levels; the first sweep is the plain induction
    levels = sorted({order(s_) for s_ in sigmas})
    groups = [[s_ for s_ in sigmas if order(s_) == j] for j in levels]
    x = {sp: np.zeros(g.n_interior) for sp in sigmas}
    sols = {}
    sweep_change = []
    for sweep in range(cfg.gs_sweeps):
        change = 0.0
        for grp in groups:
            others = [sp for sp in sigmas if sp not in grp]
            Ablk = np.vstack([np.hstack([A[(t, c)] for c in grp]) for t in grp])
            rhs = np.concatenate([y[t] - sum((A[(t, c)] @ x[c] for c in others), np.zeros(len(y[t]))) for t in grp])
            if sweep == 0:
                _check_rank(Ablk, g, task.recovery_region, ridge) if len(grp) == 1 else None
            Dblk = np.kron(np.eye(len(grp)), Dm) if Dm.size else None
            sol = _regularized_solve(Ablk, rhs, ridge, Dblk, cfg.smooth_weight)
            sols[tuple(grp)] = (sol, Ablk)
            n = g.n_interior
            for i, c in enumerate(grp):
                new = sol.x[i * n:(i + 1) * n]
                change = max(change, float(np.max(np.abs(new - x[c]))) if new.size else 0.0)
                x[c] = new
        sweep_change.append(change)

    budget = 1e-8
    terms = {}
    if task.mode == "exterior":
        # realized fields break exact triangularity, so the joint regularized
        # solve is reported; the block sweeps above are kept as a diagnostic
        yerr = np.concatenate([fd_err[t] for t in sigmas])
        Afull = np.vstack([np.hstack([A[(t, c)] for c in sigmas]) for t in sigmas])
        full = _regularized_solve(Afull, np.concatenate([y[t] for t in sigmas]), ridge,
                                  np.kron(np.eye(len(sigmas)), Dm) if Dm.size else None, cfg.smooth_weight)
        n = g.n_interior
        x = {c: full.x[i * n:(i + 1) * n] for i, c in enumerate(sigmas)}
        xn = max(float(np.linalg.norm(full.x)), 1e-300)
        noise = float(np.linalg.norm(full.pinv @ yerr)) / xn
        resolution = _probe_resolution(task, full, len(sigmas))
        upstream = 0.0
        if q_budget > 0 or a_budget > 0:
            # redo the level with q and the known coefficients perturbed by their budgets
            q_p = q_hat * (1.0 + q_budget)
            known_p = {key: a * (1.0 + a_budget) for key, a in a_known.items()}
            fs_p, tests_p, y_p = _exterior_level_system(task, q_p, _reference_P(task, known_p, k), controls, meas)
            A_p = np.vstack([np.hstack([_rows(g, product_field(g, fs_p[t], c, method), tests_p) for c in sigmas])
                             for t in sigmas])
            full_p = _regularized_solve(A_p, np.concatenate([y_p[t] for t in sigmas]), ridge,
                                        np.kron(np.eye(len(sigmas)), Dm) if Dm.size else None, cfg.smooth_weight)
            upstream = float(np.linalg.norm(full_p.x - full.x)) / xn
        budget = _relative_bound(noise + upstream + runge * noise) + resolution
        terms = {"fd": noise, "resolution": resolution, "upstream": upstream, "runge_max_err": runge}
        if budget > cfg.budget_ceiling:
            raise BudgetError(f"level k={k} budget {budget:.3e} exceeds ceiling {cfg.budget_ceiling:.3e}")
    fields = {sp: _embed(g, x[sp]) for sp in sigmas}
    diag = {"triangularity": tri, "gs_change": sweep_change, "budget_terms": terms}
    return LevelResult(fields, budget, diag)


def _exterior_reference(task: RecoveryTask, q_hat, P_ref: Nonlinearity, fields, tests) -> np.ndarray:
    """int_Omega T^_alpha v0 with reference (q_hat, P_ref) and realized first-order fields."""
    return t_functional(task.grid, q_hat, P_ref, fields, tests)


def _exterior_level_system(task: RecoveryTask, q, P_ref: Nonlinearity, controls, meas):
    """Realized fields, realized tests and reference-subtracted data for one level."""
    q = np.maximum(q, 0.0)
    cache = _exterior_cache(task)
    tests = [_realize(task, c.f, q) for c in cache.test_controls]
    field_sets, y = {}, {}
    for sig, f_list in controls.items():
        fields = [_realize(task, f, q) for f in f_list]
        field_sets[sig] = fields
        y[sig] = meas[sig] - _exterior_reference(task, q, P_ref, fields, tests)
    return field_sets, tests, y


def _exterior_ridge(cfg: RecoveryConfig) -> float:
    return cfg.ridge if cfg.ridge is not None else 1e-4


def _probe_resolution(task: RecoveryTask, sol: LsqResult, blocks: int = 1) -> float:
    """Worst relative resolution loss on the recovery region.

    The resolution matrix maps a true field to the noise-free estimate.  It is
    probed with Gaussians of width ``probe_width`` centered across the recovery
    region (one block at a time) and with the estimate itself.
    """
    g = task.grid
    R = task.recovery_region[g.omega_mask]
    n = g.n_interior
    lo, hi = omega_bounds(g)
    width = task.config.probe_width or 0.2 * float(np.min(hi - lo))
    pts = [x[task.recovery_region] for x in g.coords()]
    axes = [np.linspace(p.min(), p.max(), 5 if g.dim == 1 else 3) for p in pts]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, g.dim)
    coords = [x[g.omega_mask] for x in g.coords()]
    probes = [np.exp(-sum(((x - c) / width) ** 2 for x, c in zip(coords, ctr))) for ctr in centers]
    worst = 0.0
    Rfull = np.tile(R, blocks)
    for b in range(blocks):
        sl = slice(b * n, (b + 1) * n)
        for p in probes:
            z = np.zeros(blocks * n)
            z[sl] = p
            d = (z - sol.resolution @ z)[Rfull]
            worst = max(worst, float(np.linalg.norm(d)) / float(np.linalg.norm(p[R])))
    xr = sol.x[Rfull]
    if np.any(xr):
        worst = max(worst, float(np.linalg.norm((sol.x - sol.resolution @ sol.x)[Rfull])) / float(np.linalg.norm(xr)))
    return worst


def _triangularity(task: RecoveryTask, k: int, sigmas, field_sets) -> dict:
    """Compare G^{(sigma)}_{sigma'} on the recovery region with the permutation counts."""
    g = task.grid
    R = task.recovery_region
    method = task.params.derivative
    entries = {}
    worst = 0.0
    ok = True
    for sig in sigmas:
        count = permutation_diagonal_count(k, sig)
        expected = factorial(k) if not any(sig) else factorial(k - 1) * int(np.prod([factorial(a) for a in sig]))
        if count != expected:
            ok = False
        for sp in sigmas:
            if order(sp) < order(sig):
                continue
            G = product_field(g, field_sets[sig], sp, method)[R]
            target = float(count) if sp == sig else 0.0
            dev = float(np.max(np.abs(G - target))) / count
            entries[f"{tuple(sig)}|{tuple(sp)}"] = {"count": count, "target": target, "max_rel_dev": dev}
            worst = max(worst, dev)
    tol = task.config.triangular_tol
    return {"ok": ok and worst <= tol, "worst": worst, "entries": entries}


def run_full_recovery(task: RecoveryTask) -> RecoveryReport:
    """Recover q, then every level k = 2..K, stopping at the first level over budget."""
    g = task.grid
    R = task.recovery_region
    q_true, P_true = task.source.truth()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ContractionRegimeWarning)
        q_hat, qinfo = recover_q(task)
        errors = {"q": _rel_err(g, q_hat, q_true, R)}
        budgets = {"q": float(qinfo["budget"])}
        diagnostics: Dict[str, object] = {"q": qinfo}
        a_hat: Dict[tuple, np.ndarray] = {}
        completed: List[int] = []
        aborted = None
        if task.mode == "exterior" and budgets["q"] > task.config.budget_ceiling:
            aborted = f"potential budget {budgets['q']:.3e} exceeds ceiling {task.config.budget_ceiling:.3e}"
            return RecoveryReport(task.mode, q_hat, a_hat, errors, budgets, diagnostics, completed, aborted)
        for k in range(2, task.params.K + 1):
            try:
                ext = task.mode == "exterior"
                a_budget = max((b for key, b in budgets.items() if key != "q"), default=0.0)
                level = recover_a_level(k, task, a_hat, q_hat, budgets["q"] if ext else 0.0, a_budget if ext else 0.0)
            except BudgetError as exc:
                aborted = str(exc)
                break
            for sig, fld in level.fields.items():
                a_hat[(k - 1, sig)] = fld
                key = _akey(k - 1, sig)
                errors[key] = _rel_err(g, fld, P_true.coefficient(k - 1, sig), R)
                budgets[key] = float(level.budget)
            diagnostics[f"level_{k}"] = level.diagnostics
            completed.append(k)
    return RecoveryReport(task.mode, q_hat, a_hat, errors, budgets, diagnostics, completed, aborted)
