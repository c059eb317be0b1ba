from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zygmund.dyadic import DyadicCube, unit_cube
from zygmund.fields import SampleSpec, WeierstrassParams, linear_field, quadratic_field, tensor_sum_field, weierstrass_field
from zygmund.gradient import (
    AdmissibilityError, discrete_gradient, discrete_gradients, gradient_modulus, gradient_modulus_exhaustive,
    gradient_trajectory, remainder_batch, lemma2_residual, trajectories,
)


@st.composite
def cubes(draw, dim=2, max_level=20):
    n = draw(st.integers(0, max_level))
    return DyadicCube(n, tuple(draw(st.integers(0, 2**n - 1)) for _ in range(dim)))


@given(cubes())
def test_linear_gradient_is_exact(Q):
    V = discrete_gradient(linear_field([1.25, -0.5]), Q)
    assert np.allclose(V.vector, [1.25, -0.5], atol=V.error_bound + 1e-12)


@given(cubes(max_level=12))
def test_quadratic_gradient_closed_form(Q):
    q = np.array([1.0, 0.5])
    V = discrete_gradient(quadratic_field(q), Q)
    want = q * (2 * Q.origin + Q.side)
    assert np.allclose(V.vector, want, atol=V.error_bound + 1e-9)


def test_vectorized_matches_single():
    f = tensor_sum_field(WeierstrassParams(), 2)
    coords = np.array([[0, 0], [3, 5], [7, 7]])
    V, _ = discrete_gradients(f, 3, coords)
    for row, c in zip(V, coords):
        assert np.allclose(row, discrete_gradient(f, DyadicCube(3, tuple(c))).vector)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        discrete_gradient(linear_field([1.0]), unit_cube(2))


@settings(max_examples=30)
@given(cubes(max_level=10), st.data())
def test_lemma2_residual_direct(Q, data):
    f = quadratic_field([1.0, 2.0])
    rng = np.random.default_rng(data.draw(st.integers(0, 1000)))
    a = Q.center + rng.uniform(-1, 1, 2) * Q.side
    b = a + rng.uniform(-1, 1, 2) * Q.side
    V = discrete_gradient(f, Q).vector
    fa, fb = f(a)[0], f(b)[0]
    assert lemma2_residual(f, Q, a, b) == pytest.approx(abs(fb - fa - V @ (b - a)), abs=1e-12)


def test_inadmissible_triple_rejected():
    Q = DyadicCube(3, (0, 0))
    with pytest.raises(AdmissibilityError):
        lemma2_residual(linear_field([1.0, 1.0]), Q, [0.9, 0.9], [0.9, 0.9])


def test_remainder_batch_linear_and_bounded():
    lin = remainder_batch(linear_field([1.0, -2.0]), 2000, seed=1)
    assert lin.residuals.max() <= 1e-12
    w = remainder_batch(tensor_sum_field(WeierstrassParams(), 2), 2000, seed=1)
    assert np.isfinite(w.max_normalized) and w.max_normalized > 1.0


def test_sampled_modulus_below_exhaustive():
    f = tensor_sum_field(WeierstrassParams(), 2)
    exact = gradient_modulus_exhaustive(f, unit_cube(2), 6)
    sampled = gradient_modulus(f, 1.0, SampleSpec(count=500, levels=(0, 5)))
    assert 0 < sampled <= exact + 1e-12


def test_modulus_rejects_bad_delta():
    with pytest.raises(ValueError):
        gradient_modulus(linear_field([1.0]), 0.0, SampleSpec())


def test_trajectory_growth_and_shape():
    f = weierstrass_field(WeierstrassParams())
    tr = gradient_trajectory(f, 0.3, 20)
    assert tr.vectors.shape == (21, 1)
    assert tr.cubes[5].contains_point(0.3)
    assert tr.sup_norm >= tr.max_up_to(5)
    V, E = trajectories(f, np.array([[0.3]]), 20)
    assert np.array_equal(V[0], tr.vectors)
    with pytest.raises(ValueError):
        gradient_trajectory(f, 0.3, 41)


def test_linear_trajectory_constant():
    tr = gradient_trajectory(linear_field([0.75]), 0.123, 30)
    assert np.allclose(tr.vectors, 0.75)
    assert tr.last_increment <= 1e-9
