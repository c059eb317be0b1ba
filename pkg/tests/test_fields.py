from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zygmund.fields import (
    SampleSpec, WeierstrassParams, field_from_config, linear_field, quadratic_field, second_difference,
    seminorm_estimate, small_zygmund_profile, tensor_sum_field, weierstrass_eval, weierstrass_field,
    weierstrass_primitive,
)


def dyadic_value(k: int, m: int) -> float:
    """f_2(k/2^m) in closed form: terms n >= m all equal 2^-n."""
    x = k / 2**m
    head = math.fsum(2.0**-n * math.cos(2 * math.pi * ((2**n * k) % 2**m) / 2**m) for n in range(m))
    return head + 2.0 ** (1 - m)


def test_known_values():
    p = WeierstrassParams()
    for x, want in [(0.0, 2.0), (0.5, 0.0), (0.25, 0.0)]:
        v, e = weierstrass_eval(p, x)
        assert abs(v - want) <= 1e-12
        assert e <= 1e-12


@given(st.integers(1, 12), st.data())
def test_dyadic_closed_form(m, data):
    k = data.draw(st.integers(0, 2**m - 1))
    v, e = weierstrass_eval(WeierstrassParams(), k / 2**m)
    assert abs(v - dyadic_value(k, m)) <= e + 1e-13


@given(st.floats(-3, 3), st.integers(4, 30))
def test_certified_truncation(x, N):
    ref, ref_err = weierstrass_eval(WeierstrassParams(tol=1e-15), x)
    v, e = weierstrass_eval(WeierstrassParams(terms=N), x)
    assert abs(v - ref) <= e + ref_err


@given(st.floats(-2, 2))
def test_period_one(x):
    p = WeierstrassParams()
    a, ea = weierstrass_eval(p, x)
    b, eb = weierstrass_eval(p, x + 1.0)
    assert abs(a - b) <= ea + eb + 1e-12


def test_primitive_derivative_matches_value():
    p = WeierstrassParams(tol=1e-14)
    x, h = 0.3, 1e-5
    up, _ = weierstrass_primitive(p, x + h)
    dn, _ = weierstrass_primitive(p, x - h)
    v, _ = weierstrass_eval(p, x)
    # the primitive is smooth only up to the terms with 2^n h small; compare loosely
    assert abs((up - dn) / (2 * h) - v) < 1e-3


def test_params_validation():
    with pytest.raises(ValueError):
        WeierstrassParams(b=1.0)
    with pytest.raises(ValueError):
        WeierstrassParams(alpha=0.0)
    assert WeierstrassParams().tail(0) == 1.0


def test_linear_second_difference_vanishes():
    f = linear_field([2.0, -3.0], 1.0)
    rng = np.random.default_rng(1)
    x = rng.random((50, 2))
    h = rng.random((50, 2)) * 0.1
    val, err = second_difference(f, x, h)
    assert np.all(np.abs(val) <= err + 1e-15)


def test_quadratic_second_difference_exact():
    f = quadratic_field([1.0])
    for h in (0.5, 0.125, 2.0**-10):
        val, err = second_difference(f, 0.3, h)
        assert abs(val - 2 * h * h) <= err + 1e-15


def test_seminorm_of_weierstrass():
    est = seminorm_estimate(weierstrass_field(WeierstrassParams()), SampleSpec(count=5000, seed=3))
    # |D2 cos(2 pi 2^n x)| <= min(4, (2 pi 2^n h)^2), summed against 2^-n
    hs = 2.0 ** -np.linspace(0, 30, 3001)
    bound = max(sum(2.0**-n * min(4.0, (2 * math.pi * 2**n * h) ** 2) for n in range(60)) / h for h in hs)
    assert 20 < est.value <= bound * 1.01
    assert est.certified_lower <= est.value


def test_profiles_trend():
    w = small_zygmund_profile(weierstrass_field(WeierstrassParams()), range(3, 16), count=500)
    q = small_zygmund_profile(quadratic_field([1.0]), range(3, 16), count=500)
    assert min(r for _, r in w) > 0.5 * max(r for _, r in w)
    for (h, r) in q:
        assert r == pytest.approx(2 * h, rel=1e-6)
    with pytest.raises(ValueError):
        small_zygmund_profile(quadratic_field([1.0]), [5, 3])


def test_separable_face_integral_matches_quadrature():
    f = tensor_sum_field(WeierstrassParams(), 2) + quadratic_field([1.0, 2.0])
    lo = np.array([[0.25, 0.5]])
    side = 0.25
    got, _ = f.face_integral(0, np.array([0.5]), lo, side)
    t = lo[0, 1] + (np.arange(4096) + 0.5) / 4096 * side
    vals, _ = f.evaluate(np.stack([np.full_like(t, 0.5), t], axis=1))
    assert float(np.atleast_1d(got)[0]) == pytest.approx(vals.mean() * side, abs=1e-8)


def test_field_algebra_and_config():
    f = field_from_config({"kind": "sum", "parts": [
        {"field": {"kind": "linear", "c": [1.0, 0.0]}, "weight": 2.0},
        {"field": {"kind": "quadratic", "q": [0.0, 1.0]}},
    ]})
    v, _ = f([0.5, 0.5])
    assert v == pytest.approx(1.25)
    g = f - f
    assert g([0.1, 0.9])[0] == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        field_from_config({"kind": "nope"})
    with pytest.raises(ValueError):
        linear_field([1.0]) + linear_field([1.0, 2.0])
    with pytest.raises(ValueError):
        f(np.zeros(3))


@settings(max_examples=25)
@given(st.floats(-1, 1), st.floats(-1, 1))
def test_separable_gradient(x, y):
    f = quadratic_field([1.0, 3.0]) + linear_field([0.5, -1.0])
    g = f.gradient(np.array([[x, y]]))
    assert np.allclose(g, [[2 * x + 0.5, 6 * y - 1.0]])
