"""Tests for the rational-function and state-space layer."""

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fcairpath import lti
from fcairpath.lti import (
    ImproperRatioError,
    LtiError,
    PoleAtFrequencyError,
    PolynomialRatio,
    SingularTransferMatrixError,
    StateSpaceModel,
    TransferMatrix,
)


def first_order(tau, gain=1.0):
    return PolynomialRatio([gain], [tau, 1.0])


# ---------------------------------------------------------------------------
# polynomial helpers
# ---------------------------------------------------------------------------

def test_poly_trim_removes_leading_noise():
    c = lti.poly_trim([1e-15, 2.0, 3.0])
    assert c.tolist() == [2.0, 3.0]


def test_poly_trim_zero_polynomial():
    assert lti.poly_trim([0.0, 0.0]).tolist() == [0.0]
    assert lti.poly_trim([]).tolist() == [0.0]


def test_poly_trim_zeroes_interior_noise():
    c = lti.poly_trim([1.0, 1e-16, 5.0])
    assert c.tolist() == [1.0, 0.0, 5.0]


def test_poly_add_degree_mismatch():
    out = lti.poly_add([1.0, 0.0], [3.0])   # s + 3
    assert out.tolist() == [1.0, 3.0]


# ---------------------------------------------------------------------------
# PolynomialRatio
# ---------------------------------------------------------------------------

def test_ratio_normalizes_denominator_to_monic():
    r = PolynomialRatio([2.0], [2.0, 4.0])
    assert r.den.tolist() == [1.0, 2.0]
    assert r.num.tolist() == [1.0]


def test_ratio_rejects_zero_denominator():
    with pytest.raises(LtiError):
        PolynomialRatio([1.0], [0.0])


def test_first_order_dc_gain_and_corner():
    r = first_order(0.2)
    assert r.dc_gain() == pytest.approx(1.0)
    mag = abs(r(1j / 0.2))
    assert mag == pytest.approx(1.0 / np.sqrt(2.0), rel=1e-12)


def test_pole_at_frequency_raises():
    r = PolynomialRatio([1.0], [1.0, 0.0])  # 1/s
    with pytest.raises(PoleAtFrequencyError):
        r(0.0)
    with pytest.raises(PoleAtFrequencyError):
        r.dc_gain()


def test_properness_flags():
    assert first_order(1.0).is_strictly_proper()
    biproper = PolynomialRatio([1.0, 2.0], [1.0, 1.0])
    assert biproper.is_proper() and not biproper.is_strictly_proper()
    improper = PolynomialRatio([1.0, 0.0, 0.0], [1.0, 1.0])
    assert not improper.is_proper()


def test_ratio_arithmetic_matches_complex_arithmetic():
    a = first_order(1.0)
    b = first_order(0.5, gain=3.0)
    s = 1j * 2.7
    assert (a + b)(s) == pytest.approx(a(s) + b(s), rel=1e-12)
    assert (a - b)(s) == pytest.approx(a(s) - b(s), rel=1e-12)
    assert (a * b)(s) == pytest.approx(a(s) * b(s), rel=1e-12)
    assert (2.0 * a)(s) == pytest.approx(2.0 * a(s), rel=1e-12)


def test_series_of_two_lags_is_second_order():
    a = first_order(1.0)
    b = first_order(2.0)
    prod = a * b
    expect = 1.0 / ((1j + 1.0) * (2.0j + 1.0))
    assert prod(1j) == pytest.approx(expect, rel=1e-12)
    assert prod.den_degree == 2


def test_ratio_serialization_round_trip():
    r = PolynomialRatio([3.0, 1.0], [2.0, 5.0, 7.0])
    r2 = PolynomialRatio.from_dict(json.loads(json.dumps(r.to_dict())))
    assert np.allclose(r2.num, r.num)
    assert np.allclose(r2.den, r.den)


# ---------------------------------------------------------------------------
# TransferMatrix
# ---------------------------------------------------------------------------

def test_identity_matrix_response():
    eye = TransferMatrix.identity(3)
    assert np.allclose(eye.freq_response(4.2), np.eye(3))


def test_ragged_matrix_rejected():
    one = PolynomialRatio.constant(1.0)
    with pytest.raises(LtiError):
        TransferMatrix([[one, one], [one]])


def test_static_gain_dc():
    k = TransferMatrix([[PolynomialRatio.constant(2.0),
                         PolynomialRatio.constant(-1.0)]])
    assert np.allclose(k.dc_gain(), [[2.0, -1.0]])


def test_matrix_json_round_trip():
    g = TransferMatrix([[first_order(1.0), first_order(2.0)],
                        [first_order(3.0), first_order(4.0)]])
    g2 = TransferMatrix.from_json(g.to_json())
    w = 0.73
    assert np.allclose(g2.freq_response(w), g.freq_response(w), rtol=1e-14)


def test_series_is_matrix_product():
    rng = np.random.default_rng(7)
    g1 = TransferMatrix([[first_order(1.0), first_order(0.3)],
                         [first_order(2.0), first_order(0.7)]])
    g2 = TransferMatrix([[first_order(0.1), first_order(5.0)],
                         [first_order(0.9), first_order(1.5)]])
    for w in rng.uniform(0.01, 50.0, size=5):
        resp = lti.series(g1, g2).freq_response(w)
        assert np.allclose(resp, g2.freq_response(w) @ g1.freq_response(w),
                           rtol=1e-9, atol=1e-12)


def test_parallel_is_sum_and_cancels():
    g = TransferMatrix([[first_order(1.0), first_order(0.3)],
                        [first_order(2.0), first_order(0.7)]])
    neg = TransferMatrix([[-1.0 * g[i, j] for j in range(2)] for i in range(2)])
    assert np.allclose(lti.parallel(g, neg).freq_response(1.3), 0.0, atol=1e-12)


def test_series_dimension_mismatch():
    wide = TransferMatrix([[first_order(1.0), first_order(2.0)]])
    with pytest.raises(LtiError):
        lti.series(wide, wide)
    # conformable: a 1x2 block applied after a 2x1 block gives a scalar
    tall = TransferMatrix([[first_order(1.0)], [first_order(2.0)]])
    assert lti.series(tall, wide).shape == (1, 1)


# ---------------------------------------------------------------------------
# 2x2 inversion
# ---------------------------------------------------------------------------

def test_invert_diagonal():
    g = TransferMatrix.diagonal([first_order(1.0), first_order(2.0)])
    inv = lti.invert_2x2(g)
    assert inv[0, 0].num.tolist() == [1.0, 1.0]
    assert inv[1, 1].num.tolist() == [2.0, 1.0]
    assert abs(inv[0, 1](1j)) < 1e-14
    assert abs(inv[1, 0](1j)) < 1e-14


def test_invert_round_trip_identity():
    g = TransferMatrix([[first_order(1.0), first_order(0.3, gain=0.5)],
                        [first_order(2.0, gain=-0.2), first_order(0.7)]])
    inv = lti.invert_2x2(g)
    rng = np.random.default_rng(3)
    for w in rng.uniform(0.01, 100.0, size=20):
        prod = g.freq_response(w) @ inv.freq_response(w)
        assert np.allclose(prod, np.eye(2), rtol=1e-8, atol=1e-8)


def test_invert_singular_raises():
    row = [first_order(1.0), first_order(1.0, gain=2.0)]
    g = TransferMatrix([row, [0.5 * row[0], 0.5 * row[1]]])
    with pytest.raises(SingularTransferMatrixError):
        lti.invert_2x2(g)


def test_invert_requires_2x2():
    with pytest.raises(LtiError):
        lti.invert_2x2(TransferMatrix([[first_order(1.0)]]))


# ---------------------------------------------------------------------------
# realization
# ---------------------------------------------------------------------------

def test_realize_first_order_lag():
    ss = lti.realize(TransferMatrix([[first_order(1.0)]]))
    assert ss.n_states == 1
    assert ss.poles() == pytest.approx([-1.0])
    assert ss.D[0, 0] == 0.0


def test_realize_static_gain_has_no_states():
    ss = lti.realize(TransferMatrix([[PolynomialRatio.constant(4.0)]]))
    assert ss.n_states == 0
    assert ss.D[0, 0] == 4.0
    assert np.allclose(ss.freq_response(10.0), [[4.0]])


def test_realize_biproper_entry_feedthrough():
    # (s + 2)/(s + 1) = 1 + 1/(s + 1)
    g = TransferMatrix([[PolynomialRatio([1.0, 2.0], [1.0, 1.0])]])
    ss = lti.realize(g)
    assert ss.D[0, 0] == pytest.approx(1.0)
    for w in (0.0, 0.5, 3.0):
        assert np.allclose(ss.freq_response(w), g.freq_response(w), rtol=1e-12)


def test_realize_improper_raises_with_entry_name():
    bad = PolynomialRatio([1.0, 0.0, 0.0], [1.0, 1.0])
    g = TransferMatrix([[first_order(1.0), bad]])
    with pytest.raises(ImproperRatioError, match=r"\(0, 1\)"):
        lti.realize(g)


def test_realize_matches_response_on_mimo_matrix():
    den = [1.0, 3.0, 2.0]
    g = TransferMatrix([
        [PolynomialRatio([1.0, 0.5], den), PolynomialRatio([2.0], den)],
        [PolynomialRatio([0.3], den), PolynomialRatio([1.0, 1.0], den)],
    ])
    ss = lti.realize(g)
    assert ss.n_states <= 4  # one 2nd-order block per column
    for w in np.logspace(-2, 3, 20):
        assert np.allclose(ss.freq_response(w), g.freq_response(w),
                           rtol=1e-6, atol=1e-9)


def test_realize_shared_vs_distinct_denominators():
    # mixing denominators within a column multiplies them together
    g = TransferMatrix([[first_order(1.0)], [first_order(2.0)]])
    ss = lti.realize(g)
    assert ss.n_states == 2
    for w in (0.1, 1.0, 10.0):
        assert np.allclose(ss.freq_response(w), g.freq_response(w), rtol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(min_value=0.05, max_value=20.0), min_size=1, max_size=3),
       st.floats(min_value=-5.0, max_value=5.0))
def test_realize_response_property(taus, gain):
    den = np.ones(1)
    for t in taus:
        den = np.polymul(den, [t, 1.0])
    g = TransferMatrix([[PolynomialRatio([gain], den)]])
    ss = lti.realize(g)
    for w in (0.0, 0.3, 2.0):
        assert np.allclose(ss.freq_response(w), g.freq_response(w),
                           rtol=1e-6, atol=1e-9)


# ---------------------------------------------------------------------------
# state space
# ---------------------------------------------------------------------------

def test_state_space_shape_validation():
    with pytest.raises(LtiError):
        StateSpaceModel(np.zeros((2, 1)), np.zeros((2, 1)),
                        np.zeros((1, 2)), np.zeros((1, 1)))
    with pytest.raises(LtiError):
        StateSpaceModel(np.zeros((2, 2)), np.zeros((2, 1)),
                        np.zeros((1, 2)), np.zeros((2, 2)))


def test_stability_checks_continuous_and_discrete():
    c = StateSpaceModel([[-1.0]], [[1.0]], [[1.0]], [[0.0]])
    assert c.is_stable()
    d = StateSpaceModel([[0.99]], [[1.0]], [[1.0]], [[0.0]], ts=0.02)
    assert d.is_stable()
    assert not StateSpaceModel([[1.01]], [[1.0]], [[1.0]], [[0.0]], ts=0.02).is_stable()


def test_dc_gain_matches_frequency_response_at_zero():
    A = [[-2.0, 1.0], [0.0, -3.0]]
    ss = StateSpaceModel(A, [[0.0], [1.0]], [[1.0, 0.0]], [[0.0]])
    assert ss.dc_gain() == pytest.approx(ss.freq_response(0.0).real)


def test_state_space_json_round_trip():
    ss = StateSpaceModel([[-1.0, 0.5], [0.0, -2.0]], [[1.0], [0.5]],
                         [[1.0, -1.0]], [[0.25]], ts=0.02)
    ss2 = StateSpaceModel.from_json(ss.to_json())
    assert np.array_equal(ss2.A, ss.A)
    assert np.array_equal(ss2.B, ss.B)
    assert np.array_equal(ss2.C, ss.C)
    assert np.array_equal(ss2.D, ss.D)
    assert ss2.ts == ss.ts


# ---------------------------------------------------------------------------
# discretization
# ---------------------------------------------------------------------------

def test_discretize_scalar_closed_form():
    ss = StateSpaceModel([[-1.0]], [[1.0]], [[1.0]], [[0.0]])
    d = lti.discretize(ss, 0.02)
    assert d.A[0, 0] == pytest.approx(np.exp(-0.02), rel=1e-12)
    assert d.B[0, 0] == pytest.approx(1.0 - np.exp(-0.02), rel=1e-12)
    assert d.ts == 0.02


def test_discretize_integrator():
    ss = StateSpaceModel([[0.0]], [[1.0]], [[1.0]], [[0.0]])
    d = lti.discretize(ss, 0.02)
    assert d.A[0, 0] == pytest.approx(1.0)
    assert d.B[0, 0] == pytest.approx(0.02)


def test_discretize_rejects_discrete_input():
    d = StateSpaceModel([[0.5]], [[1.0]], [[1.0]], [[0.0]], ts=0.01)
    with pytest.raises(LtiError):
        lti.discretize(d, 0.01)


def test_discretize_step_response_equivalence():
    # under a held input the discrete model must interpolate the continuous one
    A = np.array([[-3.0, 1.0], [0.0, -0.5]])
    B = np.array([[0.0], [1.0]])
    C = np.array([[1.0, 2.0]])
    ss = StateSpaceModel(A, B, C, [[0.0]])
    ts = 0.05
    d = lti.discretize(ss, ts)
    from scipy.linalg import expm
    x = np.zeros(2)
    for k in range(1, 41):
        x = d.A @ x + d.B[:, 0]
        # continuous ZOH truth over k steps of a unit step input
        t = k * ts
        xc = np.linalg.solve(A, (expm(A * t) - np.eye(2)) @ B[:, 0])
        assert np.allclose(x, xc, atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=0.01, max_value=5.0),
       st.floats(min_value=0.01, max_value=5.0),
       st.floats(min_value=-3.0, max_value=3.0))
def test_discretize_preserves_stability(p1, p2, coupling):
    A = np.array([[-p1, coupling], [0.0, -p2]])
    ss = StateSpaceModel(A, np.eye(2), np.eye(2), np.zeros((2, 2)))
    d = lti.discretize(ss, 0.02)
    assert d.is_stable()
