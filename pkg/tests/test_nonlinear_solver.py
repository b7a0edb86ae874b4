import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import grid_1d
from nlfrac.errors import ContractionError, ContractionRegimeWarning, ConvergenceError, ParameterError
from nlfrac.grid import max_norm
from nlfrac.linear_solver import interior_system
from nlfrac.linearization import LinearizationState, compute_cascade, fit_slope
from nlfrac.nonlinear_solver import (
    ContractionConfig,
    check_smallness,
    invariance_lhs,
    nonlinear_residual,
    smallest_admissible_delta,
    solve_nlfse,
)
from nlfrac.operators import FracParams, Nonlinearity
from nlfrac.shapes import cosine_bump, smooth_bump

TIGHT = ContractionConfig(delta=0.5, eps0=1.0, tol=1e-13, max_iter=500, rtol=1e-16)


def _setup(g, K=2, m=1):
    q = 0.5 * smooth_bump(g, 3.0, 0.9)
    a = smooth_bump(g, 3.0, 0.9)
    coeffs = {(1, (0,)): a}
    if m:
        coeffs[(1, (1,))] = 0.3 * a
    if K >= 3:
        coeffs[(2, (0,))] = 0.5 * a
    P = Nonlinearity(FracParams(1.5, m, K), g, coeffs)
    f = 0.1 * cosine_bump(g, 5.0, 0.6)
    return q, P, f


def test_zero_data(g1):
    q, P, _ = _setup(g1)
    rep = solve_nlfse(g1, q, P, g1.zeros(), TIGHT)
    assert not np.any(rep.solution)
    assert rep.iterations == 1


def test_linear_degeneration(g1):
    q, P, f = _setup(g1)
    zero = Nonlinearity.zero(P.params, g1)
    u = solve_nlfse(g1, q, zero, f, TIGHT).solution
    assert np.max(np.abs(u - interior_system(g1, 1.5, q).solve(None, f))) <= 1e-12


@pytest.mark.parametrize("K", [2, 3])
def test_residual_contract(g1, K):
    q, P, f = _setup(g1, K)
    rep = solve_nlfse(g1, q, P, f, TIGHT)
    assert rep.residual_norm <= 10 * TIGHT.tol * (1 + max_norm(f))
    assert rep.residual_norm == nonlinear_residual(g1, 1.5, q, P, rep.solution)
    ext = ~g1.omega_mask
    assert np.array_equal(rep.solution[ext], f[ext])


def test_iterative_linear_backend(g1):
    q, P, f = _setup(g1)
    cfg = ContractionConfig(delta=0.5, eps0=1.0, tol=1e-12, linear_method="iterative", linear_tol=1e-11)
    a = solve_nlfse(g1, q, P, f, cfg).solution
    b = solve_nlfse(g1, q, P, f, TIGHT).solution
    assert np.max(np.abs(a - b)) <= 1e-9


def test_second_order_expansion():
    g = grid_1d(N=64)
    q = 0.5 * smooth_bump(g, 3.0, 0.9)
    P = Nonlinearity(FracParams(1.5, 0, 2), g, {(1, (0,)): smooth_bump(g, 3.0, 0.9)})
    f = cosine_bump(g, 5.0, 0.6)
    st = compute_cascade(LinearizationState(g, q, P, [f]), 2)
    v1, w = st.w[(1,)], st.w[(2,)]
    eps = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3]
    errs = [max_norm(solve_nlfse(g, q, P, e * f, TIGHT).solution - (e * v1 + e**2 * w / 2)) for e in eps]
    assert fit_slope(eps, errs) >= 2.8


def test_uniqueness_from_two_starts(g1, rng):
    q, P, f = _setup(g1, 3)
    a = solve_nlfse(g1, q, P, f, TIGHT).solution
    v0 = g1.restrict_interior(rng.uniform(-1, 1, g1.shape)) * TIGHT.delta / 2
    b = solve_nlfse(g1, q, P, f, TIGHT, v0=v0).solution
    assert np.max(np.abs(a - b)) <= 10 * TIGHT.tol


def test_data_monotonicity(g1):
    q, P, f = _setup(g1)
    big = max_norm(solve_nlfse(g1, q, P, f, TIGHT).solution)
    half = max_norm(solve_nlfse(g1, q, P, f / 2, TIGHT).solution)
    assert half <= 1.5 * big / 2


def test_ball_violation_and_nonconvergence(g1):
    q, _, f = _setup(g1)
    strong = Nonlinearity(FracParams(1.5, 0, 2), g1, {(1, (0,)): 200 * smooth_bump(g1, 3.0, 0.9)})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ContractionRegimeWarning)
        with pytest.raises(ContractionError, match="contraction ball violated"):
            solve_nlfse(g1, q, strong, 10 * f, TIGHT)
    _, P, _ = _setup(g1)
    with pytest.raises(ConvergenceError) as err:
        solve_nlfse(g1, q, P, f, ContractionConfig(delta=0.5, eps0=1.0, tol=1e-15, max_iter=2))
    assert err.value.iterations == 2


def test_regime_warning(g1):
    q, P, f = _setup(g1)
    with pytest.warns(ContractionRegimeWarning, match="outside contraction regime"):
        solve_nlfse(g1, q, P, f, ContractionConfig(delta=0.5, eps0=1e-3))


def test_config_validation():
    for kw in ({"delta": 1.0}, {"delta": 0.0}, {"eps0": 0.0}, {"tol": 0.0}, {"linear_method": "lu"}):
        with pytest.raises(ParameterError):
            ContractionConfig(**kw)


# check_smallness --------------------------------------------------------------

def test_smallness_trivial_for_zero_p(g1):
    q, P, f = _setup(g1)
    rep = check_smallness(g1, f, Nonlinearity.zero(P.params, g1), q)
    assert rep.coefficient_sum == 0.0 and rep.holds


def test_smallness_fails_for_large_coefficients(g1):
    q, _, f = _setup(g1)
    a = 1e3 * smooth_bump(g1, 3.0, 0.9)
    P = Nonlinearity(FracParams(1.5, 0, 2), g1, {(1, (0,)): a})
    rep = check_smallness(g1, f, P, q, ContractionConfig(delta=0.5, eps0=0.5))
    assert rep.coefficient_sum == max_norm(a)
    assert not rep.holds


def _bisection_delta(K, C, Cp, eps0):
    # scan for the first sign change of lhs(d) - d, then bisect
    phi = lambda d: invariance_lhs(K, C, Cp, d, eps0) - d  # noqa: E731
    grid = np.linspace(1e-9, 10.0, 200001)
    vals = np.array([phi(d) for d in grid])
    idx = np.flatnonzero(vals < 0)
    if not len(idx):
        return None
    lo, hi = grid[idx[0] - 1], grid[idx[0]]
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if phi(mid) > 0 else (lo, mid)
    return 0.5 * (lo + hi)


@pytest.mark.parametrize("K,C,Cp,eps0", [(2, 1.0, 0.5, 0.01), (3, 2.0, 1.0, 0.05), (4, 0.7, 3.0, 0.02)])
def test_delta_star_matches_bisection(K, C, Cp, eps0):
    ref = _bisection_delta(K, C, Cp, eps0)
    got = smallest_admissible_delta(K, C, Cp, eps0)
    assert ref is not None and got is not None
    assert abs(got - ref) <= 1e-3


def test_delta_star_absent_for_large_data():
    assert smallest_admissible_delta(2, 10.0, 10.0, 1.0) is None


@settings(max_examples=30, deadline=None)
@given(K=st.integers(2, 5), C=st.floats(0.1, 5), Cp=st.floats(0.1, 5), eps0=st.floats(1e-4, 0.05))
def test_invariance_holds_just_past_delta_star(K, C, Cp, eps0):
    d = smallest_admissible_delta(K, C, Cp, eps0)
    if d is None:
        return
    assert invariance_lhs(K, C, Cp, d * (1 + 1e-6), eps0) < d * (1 + 1e-6)
    assert invariance_lhs(K, C, Cp, d * (1 - 1e-3), eps0) > d * (1 - 1e-3)
