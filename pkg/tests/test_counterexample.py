from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zygmund import counterexample as cx
from zygmund.fields import field_from_config


@pytest.fixture(scope="module")
def ce():
    return cx.build_counterexample(3)


# -- one-dimensional profiles


@given(st.floats(-2, 2), st.integers(1, 50), st.floats(0.01, 1.0))
def test_psi_periodic_and_bounded(t, n, eps):
    a = float(cx.psi(t, eps, n))
    b = float(cx.psi(t + 1.0 / n, eps, n))
    assert a == pytest.approx(b, abs=1e-12)
    assert 0 <= a <= eps / (2 * n) + 1e-15


def test_psi_rejects_bad_input():
    with pytest.raises(ValueError):
        cx.psi(0.1, 0.5, 0)


PROFILE = cx.smooth_profile(0.5, 0.01, 64, 1e-3)


@given(st.floats(-1, 1))
def test_profile_close_to_sawtooth(t):
    # smoothing only acts inside windows where the parabola sits b/4 above the corner
    diff = abs(float(PROFILE(t)) - float(cx.psi(t, 0.5, 64)))
    assert diff <= 0.5 * PROFILE.beta / 4 + 1e-15
    assert abs(float(PROFILE.derivative(t))) <= 0.5 + 1e-12


def test_profile_slopes_outside_windows():
    t = np.linspace(0, 1, 20001)
    bad = np.zeros_like(t, dtype=bool)
    for lo, hi in PROFILE.bad_intervals(0, 1):
        bad |= (t >= lo) & (t <= hi)
    assert np.allclose(np.abs(PROFILE.derivative(t[~bad])), 0.5)


@settings(max_examples=50)
@given(st.floats(0.0, 1.0))
def test_profile_derivative_matches_difference(t):
    h = 1e-8
    fd = (float(PROFILE(t + h)) - float(PROFILE(t - h))) / (2 * h)
    d = float(PROFILE.derivative(t))
    assert abs(fd - d) <= 0.5 * 2 * h / PROFILE.beta * 4 + 1e-6 or abs(abs(fd) - 0.5) < 1e-6


def test_bad_interval_count():
    n = PROFILE.n
    iv = PROFILE.bad_intervals(-1.0, 1.0)
    # corners i/(2n) for i = -2n..2n: two per period of length 1/n
    assert len(iv) == 4 * n + 1
    assert all(hi - lo == pytest.approx(PROFILE.beta) for lo, hi in iv)
    centers = [(lo + hi) / 2 for lo, hi in PROFILE.bad_intervals(0.0, 1.0)]
    assert sum(1 for c in centers if 0 <= c < 1) == 2 * n


def test_smooth_profile_validation():
    with pytest.raises(ValueError):
        cx.smooth_profile(0.5, 0.01, 64, 1.0 / 128)
    with pytest.raises(ValueError):
        cx.smooth_profile(0.5, 1e-4, 64, 1e-3)


# -- bumps


def test_bump_plateau_and_support():
    N, alpha = 3, 0.01
    c = np.array([0.5, 0.5])
    side = 2.0**-N
    v, _ = cx.bump(np.array([[0.5, 0.5], [0.5 + side / 2 - alpha - 1e-4, 0.5]]), c, N, alpha)
    assert np.allclose(v, 1.0)
    v, g = cx.bump(np.array([[0.5 + side / 2 + 1e-6, 0.5]]), c, N, alpha)
    assert v[0] == 0.0 and np.allclose(g, 0.0)
    with pytest.raises(ValueError):
        cx.bump(c, c, N, side)


@settings(max_examples=50)
@given(st.floats(-1, 1), st.floats(-1, 1))
def test_bump_gradient(dx, dy):
    N, alpha = 2, 0.05
    c = np.array([0.375, 0.625])
    x = c + np.array([dx, dy]) * 2.0**-N / 2
    h = 1e-7
    _, g = cx.bump(x, c, N, alpha)
    fd = [(cx.bump(x + h * e, c, N, alpha)[0][0] - cx.bump(x - h * e, c, N, alpha)[0][0]) / (2 * h) for e in np.eye(2)]
    assert np.allclose(g[0], fd, atol=1e-4)
    assert alpha * np.linalg.norm(g[0]) <= cx.BUMP_C + 1e-9


def test_bump_constant():
    assert cx.bump_constant_scan() <= cx.BUMP_C
    # the scan attains the peak smoothstep slope 3/2; BUMP_C is the cruder sqrt(2) * 3/2
    assert cx.bump_constant_scan() == pytest.approx(1.5, rel=1e-6)


# -- schedule


def test_schedule_invariants(ce):
    fams = cx.audit_schedule(ce.schedule.to_json())
    assert fams == {k: True for k in ("eps_squares", "eta", "alpha", "sigma", "n_beta", "sigma_tail")}
    for r in ce.schedule.records:
        assert r.n * Fraction(r.sigma) > 2
        assert isinstance(r.n, int)


def test_schedule_audit_catches_edits(ce):
    obj = ce.schedule.to_json()
    obj["records"][1]["sigma"] = obj["records"][0]["sigma"]
    fams = cx.audit_schedule(obj)
    assert not fams["sigma"] or not fams["sigma_tail"]


def test_schedule_validation():
    with pytest.raises(cx.ScheduleError):
        cx.schedule_build([0.5, 0.6])
    with pytest.raises(cx.ScheduleError):
        cx.schedule_build([0.5], fraction=0.75)
    with pytest.raises(cx.ScheduleError):
        cx.schedule_build([])
    with pytest.raises(cx.ScheduleError):
        cx.schedule_build([1.5])


def test_schedule_json_round_trip(ce):
    again = cx.QuantifierSchedule.from_json(ce.schedule.to_json())
    assert again.to_json() == ce.schedule.to_json()
    assert cx.default_epsilons(3) == pytest.approx([(k + 2) ** -0.5 for k in range(3)])


# -- stage functions


def _points(ce, count, seed):
    rng = np.random.default_rng(seed)
    return list(zip(cx._random_ints(rng, count, ce.P), cx._random_ints(rng, count, ce.P)))


def test_exact_and_float_values_agree(ce):
    for X in _points(ce, 200, 1):
        for j in range(ce.K):
            exact = ce.stage_value_exact(j, X)
            assert float(exact) == pytest.approx(ce.stage_eval(j, X).value, rel=1e-9, abs=1e-300)


def test_stage_sup_and_tail(ce):
    sig = [r.sigma for r in ce.schedule.records]
    for k in range(ce.K):
        pts, _ = cx.sample_points(ce, k, 300, seed=k)
        for X in pts:
            g = [abs(float(ce.stage_value_exact(j, X))) for j in range(ce.K)]
            assert g[k] <= sig[k]
            # |f_K - f_k| <= sum_{j >= k} sigma_j <= 2 sigma_k
            assert math.fsum(g[k:]) <= 2 * sig[k]


def test_stage_gradient_matches_difference(ce):
    h = 2**-40
    H = 1 << (ce.P - 40)
    for X in _points(ce, 50, 2):
        ev = ce.stage_eval(0, X)
        if ev.in_strip or ev.in_frame:
            continue
        for i in range(2):
            up = list(X); dn = list(X)
            up[i] += H; dn[i] -= H
            fd = float(ce.stage_value_exact(0, tuple(up)) - ce.stage_value_exact(0, tuple(dn))) / (2 * h)
            assert fd == pytest.approx(ev.grad[i], abs=1e-6)


def test_exceptional_points_are_covered(ce):
    for k in range(ce.K):
        pts, _ = cx.sample_points(ce, k, 500, seed=10 + k)
        for X in pts:
            ev = ce.stage_eval(k, X)
            if ev.in_frame or ev.in_strip:
                assert ce.in_cover(k, X)


def test_construction_json_round_trip(ce):
    X = _points(ce, 5, 3)
    vals = [ce.value_f(ce.K, x) for x in X]
    again = cx.Counterexample.from_json(ce.to_json())
    assert [again.value_f(again.K, x) for x in X] == vals
    with pytest.raises(ValueError):
        cx.Counterexample(ce.schedule, precision=8)


def test_field_interface():
    f = field_from_config({"kind": "counterexample", "stages": 2})
    v, e = f.evaluate(np.array([[0.3, 0.7], [0.1, 0.2]]))
    ce = f.construction
    assert v[0] == ce.value_f(2, ce.exact([0.3, 0.7]))
    assert np.all(e > 0)
    assert f.gradient(np.array([[0.3, 0.7]])).shape == (1, 2)
    assert f.to_json()["kind"] == "counterexample"


def test_stage_zero_audit_small(ce):
    a = cx.stage_audit(ce, 0, 2000, seed=5, continuity_pairs=200)
    assert a.sup_violations == 0 and a.escapes == 0
    assert a.passed


def test_shell_bound_small(ce):
    rows = cx.shell_audit(ce, 200, seed=1)
    assert [r.j for r in rows] == list(range(ce.K))
    assert all(r.passed for r in rows)
