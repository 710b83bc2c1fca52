import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cibend.jets import (JetError, MultiJet, jet_cos, jet_einsum, jet_exp, jet_inv_matrix,
                         jet_recip, jet_sin, jet_sqrt, multi_indices, ncoeffs)

floats = st.floats(-2, 2, allow_nan=False)


def rand_jet(seed, nvars=2, shape=(), order=3, lo=-1.0, hi=1.0):
    rng = np.random.default_rng(seed)
    c = rng.uniform(lo, hi, (ncoeffs(nvars, order),) + shape)
    return MultiJet(nvars, c, order)


def positive_jet(seed, nvars=2):
    j = rand_jet(seed, nvars)
    j.coeffs[0] = np.random.default_rng(seed + 1).uniform(0.5, 2.0)
    return j


def close(a: MultiJet, b: MultiJet, tol=1e-12):
    return np.allclose(a.coeffs, b.coeffs, atol=tol, rtol=0)


def test_monomial_product():
    u = MultiJet.variables([0.0], 3)[0]
    out = u * (u * u)
    # d^3 u^3 = 6, everything else 0 at the origin
    assert np.allclose(out.coeffs, [0, 0, 0, 6])


def test_difference_of_squares():
    u = MultiJet.variables([0.0], 3)[0]
    out = (1 + u) * (1 - u)
    assert np.allclose(out.coeffs, [1, 0, -2, 0])


def test_x_sin_x_against_taylor_series():
    # x sin x = x^2 - x^4/6 + ...: derivatives at 0 are (0, 0, 2, 0)
    x = MultiJet.variables([0.0], 3)[0]
    assert np.allclose((x * jet_sin(x)).coeffs, [0, 0, 2, 0], atol=1e-15)


@given(floats, floats)
def test_exp_sin_product_matches_closed_form(x, y):
    v = MultiJet.variables([x, y], 3)
    h = jet_exp(v[0]) * jet_sin(v[1])
    dsin = [math.sin(y), math.cos(y), -math.sin(y), -math.cos(y)]
    for a in multi_indices(2, 3):
        expect = math.exp(x) * dsin[a[1]]
        assert h.derivative(a) == pytest.approx(expect, abs=1e-12)


@given(floats)
def test_cos_derivatives(x):
    c = jet_cos(MultiJet.variables([x], 3)[0])
    assert np.allclose(c.coeffs, [math.cos(x), -math.sin(x), -math.cos(x), math.sin(x)])


def test_sqrt_of_constant_and_exact_square():
    assert close(jet_sqrt(MultiJet.constant(4.0, 1)), MultiJet.constant(2.0, 1))
    u = MultiJet.variables([0.3], 3)[0]
    assert close(jet_sqrt((1 + u) * (1 + u)), 1 + u)


def test_recip_of_constant():
    assert close(jet_recip(MultiJet.constant(2.0, 2)), MultiJet.constant(0.5, 2))


def test_recip_of_one_plus_u_alternates_sign():
    u = MultiJet.variables([0.0], 3)[0]
    r = jet_recip(1 + u)
    assert np.all(np.sign(r.coeffs) == [1, -1, 1, -1])
    assert close(r * (1 + u), MultiJet.constant(1.0, 1))


@settings(max_examples=60)
@given(st.integers(0, 10_000))
def test_sqrt_squares_back(seed):
    a = positive_jet(seed)
    s = jet_sqrt(a)
    assert close(s * s, a, 1e-10)


@settings(max_examples=60)
@given(st.integers(0, 10_000))
def test_recip_round_trip(seed):
    a = positive_jet(seed, nvars=3)
    assert close(jet_recip(jet_recip(a)), a, 1e-9)
    assert close(a * jet_recip(a), MultiJet.constant(1.0, 3), 1e-10)


@settings(max_examples=60)
@given(st.integers(0, 10_000))
def test_ring_axioms(seed):
    a, b, c = (rand_jet(seed + k, nvars=3) for k in range(3))
    assert close(a * b, b * a)
    assert close((a * b) * c, a * (b * c), 1e-11)
    assert close(a * (b + c), a * b + a * c, 1e-12)


@settings(max_examples=40)
@given(st.integers(0, 10_000))
def test_leibniz_for_gradient(seed):
    a, b = rand_jet(seed), rand_jet(seed + 7)
    lhs = (a * b).gradient()
    rhs = a.gradient() * b.truncate(2) + a.truncate(2) * b.gradient()
    assert close(lhs, rhs, 1e-12)


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_matrix_inverse(seed):
    rng = np.random.default_rng(seed)
    g = rand_jet(seed, nvars=2, shape=(3, 3), lo=-0.2, hi=0.2)
    A = rng.standard_normal((3, 3))
    g.coeffs[0] = A @ A.T + 3 * np.eye(3)
    prod = jet_einsum("ij,jk->ik", g, jet_inv_matrix(g))
    assert close(prod, MultiJet.constant(np.eye(3), 2), 1e-10)


def test_polynomial_composition_matches_numpy():
    # p(q(x)) derivatives at a point against numpy.polynomial
    P = np.polynomial.Polynomial
    p, q = P([1.0, -2.0, 0.5, 3.0]), P([0.2, 1.5, -1.0])
    x0 = 0.7
    x = MultiJet.variables([x0], 3)[0]
    qj = 0.2 + 1.5 * x - x * x
    pj = 1.0 - 2.0 * qj + 0.5 * qj * qj + 3.0 * qj * qj * qj
    comp = p(q)
    expect = [comp.deriv(k)(x0) if k else comp(x0) for k in range(4)]
    assert np.allclose(pj.coeffs, expect, rtol=1e-13)


def test_errors():
    with pytest.raises(JetError):
        MultiJet(0, [1.0])
    with pytest.raises(JetError):
        MultiJet(2, np.zeros(3), 3)
    with pytest.raises(JetError):
        MultiJet.variables([0.0], 2).derivative((3,))
    with pytest.raises(JetError):
        jet_sqrt(MultiJet.constant(-1.0, 1))
    with pytest.raises(JetError):
        jet_recip(MultiJet.constant(0.0, 1))
