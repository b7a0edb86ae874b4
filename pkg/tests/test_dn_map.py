import numpy as np
import pytest

from conftest import grid_1d
from nlfrac.dn_map import (
    DNData,
    dn_derivative,
    dn_matrix,
    dn_pair,
    lemma_derivative_value,
    quadratic_form,
)
from nlfrac.errors import ParameterError
from nlfrac.grid import inner_product
from nlfrac.linear_solver import interior_system
from nlfrac.linearization import FD_CONFIG, LinearizationState, compute_cascade
from nlfrac.operators import FracParams, Nonlinearity, bilinear_form
from nlfrac.shapes import cosine_bump, smooth_bump, window_bumps


def _model(g, K=3):
    a = smooth_bump(g, 3.0, 0.9)
    coeffs = {(1, (0,)): a, (1, (1,)): 0.3 * a}
    if K >= 3:
        coeffs[(2, (0,))] = 0.5 * smooth_bump(g, 2.9, 0.8)
    return 0.5 * smooth_bump(g, 3.0, 0.9), Nonlinearity(FracParams(1.5, 1, K), g, coeffs)


def _fs(g):
    return [0.05 * cosine_bump(g, 4.9, 0.5), 0.04 * cosine_bump(g, 5.3, 0.5), 0.06 * cosine_bump(g, 5.6, 0.5)]


def test_zero_data_pairs_to_zero(g1):
    q, P = _model(g1)
    g = cosine_bump(g1, 1.0, 0.4)
    assert dn_pair(g1, g1.zeros(), g, q, P, FD_CONFIG) == 0.0


def test_linear_dn_symmetry(g1):
    q, P = _model(g1)
    zero = Nonlinearity.zero(P.params, g1)
    f, g = 0.1 * cosine_bump(g1, 5.0, 0.5), cosine_bump(g1, 1.0, 0.4)
    assert abs(dn_pair(g1, f, g, q, zero, FD_CONFIG) - dn_pair(g1, g, f, q, zero, FD_CONFIG)) <= 1e-10


def test_interior_test_vanishes(g1):
    q, P = _model(g1)
    f = _fs(g1)[0]
    psi = g1.restrict_interior(smooth_bump(g1, 3.0, 0.5))
    assert abs(dn_pair(g1, f, psi, q, P, FD_CONFIG)) <= 1e-11
    assert abs(dn_pair(g1, f, psi, q, Nonlinearity.zero(P.params, g1), FD_CONFIG)) <= 1e-11


def test_coincident_windows_symmetric():
    g = grid_1d(w1=(4.4, 6.0), w2=(4.4, 6.0))
    q, P = _model(g)
    basis = window_bumps(g, g.w1_mask, 5)
    data = dn_matrix(g, q, Nonlinearity.zero(P.params, g), basis, basis, FD_CONFIG)
    assert np.max(np.abs(data.pairings - data.pairings.T)) <= 1e-10


def test_zero_basis_vector_and_determinism(g1):
    q, P = _model(g1)
    bin_ = window_bumps(g1, g1.w1_mask, 3)
    bin_[1] = g1.zeros()
    bout = window_bumps(g1, g1.w2_mask, 4)
    a = dn_matrix(g1, q, P, [0.05 * b for b in bin_], bout, FD_CONFIG)
    b = dn_matrix(g1, q.copy(), P, [0.05 * b for b in bin_], bout, FD_CONFIG)
    assert not np.any(a.pairings[1])
    assert np.max(np.abs(a.pairings - b.pairings)) <= 1e-11


def test_basis_support_checked(g1):
    q, P = _model(g1)
    with pytest.raises(ParameterError, match="W1"):
        dn_matrix(g1, q, P, [cosine_bump(g1, 1.0, 0.4)], [cosine_bump(g1, 1.0, 0.4)], FD_CONFIG)


def test_dndata_json_round_trip(g1):
    q, P = _model(g1)
    bin_, bout = window_bumps(g1, g1.w1_mask, 2), window_bumps(g1, g1.w2_mask, 2)
    d = dn_matrix(g1, q, P, [0.05 * b for b in bin_], bout, FD_CONFIG)
    d.deriv_pairings = {"(1, 1)": 0.25}
    back = DNData.from_json(d.to_json())
    assert np.array_equal(back.pairings, d.pairings)
    assert all(np.array_equal(x, y) for x, y in zip(back.basis_in, d.basis_in))
    assert back.deriv_pairings == d.deriv_pairings
    with pytest.raises(ParameterError):
        DNData(bin_, bout, np.full((2, 2), np.nan))
    with pytest.raises(ParameterError):
        DNData(bin_, bout, np.zeros((3, 2)))


def test_first_order_derivative_is_linear_dn(g1):
    q, P = _model(g1)
    f = _fs(g1)
    g = cosine_bump(g1, 1.0, 0.4)
    d = dn_derivative((0, 1, 0), f, g, 1e-3, g1, q, P, FD_CONFIG)
    lin = dn_pair(g1, f[1], g, q, Nonlinearity.zero(P.params, g1), FD_CONFIG)
    assert abs(d - lin) <= 1e-8
    v = interior_system(g1, 1.5, q).solve(None, f[1])
    assert abs(d - quadratic_form(g1, v, g, q, 1.5)) <= 1e-8


def test_split_matches_plain_differencing(g1):
    q, P = _model(g1)
    f = _fs(g1)
    g = cosine_bump(g1, 1.0, 0.4)
    a = dn_derivative((1, 1, 0), f, g, 1e-2, g1, q, P, FD_CONFIG)
    b = dn_derivative((1, 1, 0), f, g, 1e-2, g1, q, P, FD_CONFIG, split_linear=False)
    assert abs(a - b) <= 1e-8 * max(1.0, abs(a))


def test_adjoint_pairing_gives_T(g1):
    q, P = _model(g1)
    f = _fs(g1)
    gext = cosine_bump(g1, 1.0, 0.4)
    v0 = interior_system(g1, 1.5, q).solve(None, gext)
    st = compute_cascade(LinearizationState(g1, q, P, f), 3)
    for alpha in [(1, 1, 0), (1, 1, 1)]:
        d = dn_derivative(alpha, f, v0, 1e-3, g1, q, P, FD_CONFIG)
        ref = inner_product(g1, st.T[alpha], v0, g1.omega_mask)
        assert abs(d - ref) <= 1e-6
        lem = lemma_derivative_value(g1, st.w[alpha], st.T[alpha], v0, q, 1.5)
        assert abs(lem - ref) <= 1e-11


def test_derivative_converges_linearly(g1):
    q, P = _model(g1)
    f = _fs(g1)
    g = cosine_bump(g1, 1.0, 0.4)
    st = compute_cascade(LinearizationState(g1, q, P, f), 2)
    ref = lemma_derivative_value(g1, st.w[(1, 1, 0)], st.T[(1, 1, 0)], g, q, 1.5)
    errs = [abs(dn_derivative((1, 1, 0), f, g, h, g1, q, P, FD_CONFIG) - ref) for h in (4e-3, 2e-3, 1e-3)]
    assert 1.6 < errs[0] / errs[1] < 2.4 and 1.6 < errs[1] / errs[2] < 2.4


def test_zero_nonlinearity_higher_derivative(g1):
    q, P = _model(g1)
    zero = Nonlinearity.zero(P.params, g1)
    d = dn_derivative((1, 1, 0), _fs(g1), cosine_bump(g1, 1.0, 0.4), 1e-3, g1, q, zero)
    assert abs(d) <= 1e-9


def test_list_of_tests(g1):
    q, P = _model(g1)
    gs = window_bumps(g1, g1.w2_mask, 3)
    vals = dn_derivative((1, 1, 0), _fs(g1), gs, 1e-2, g1, q, P, FD_CONFIG)
    one = dn_derivative((1, 1, 0), _fs(g1), gs[2], 1e-2, g1, q, P, FD_CONFIG)
    assert vals.shape == (3,) and vals[2] == one


def test_integration_by_parts(g1, rng):
    q, _ = _model(g1)
    w = g1.restrict_interior(rng.standard_normal(g1.shape))
    v0 = interior_system(g1, 1.5, q).solve(None, cosine_bump(g1, 5.0, 0.6))
    assert abs(quadratic_form(g1, w, v0, q, 1.5)) <= 1e-11 * max(1.0, np.max(np.abs(w)))
    assert abs(bilinear_form(g1, w, v0, q, None, 1.5)) <= 1e-11 * max(1.0, np.max(np.abs(w)))
