from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zygmund.dyadic import DyadicCube, unit_cube
from zygmund.fields import WeierstrassParams, linear_field, quadratic_field, tensor_sum_field
from zygmund.martingale import (
    Polygonal, VectorMartingale, bloch_norm, boundedness_mask, boundedness_set, conservative_defect,
    constant_martingale, defect_audit, face_integral_martingale, line_integral, martingale_from_leaves,
    martingale_residual_bounds, random_admissible_polygonal, split_polygonal,
)

points = st.tuples(st.floats(0, 1), st.floats(0, 1))


@given(st.lists(points, min_size=2, max_size=6, unique=True), st.integers(0, 6))
def test_constant_line_integral_is_displacement(pts, n):
    v = np.array(pts)
    if np.any(np.all(np.diff(v, axis=0) == 0, axis=1)):
        return
    gamma = Polygonal(v)
    m = constant_martingale([1.5, -0.5], 6)
    want = np.array([1.5, -0.5]) @ (gamma.end - gamma.start)
    assert line_integral(m, n, gamma) == pytest.approx(want, abs=1e-12)


@given(st.lists(points, min_size=2, max_size=5, unique=True), st.integers(0, 8))
def test_pieces_partition_each_segment(pts, n):
    v = np.array(pts)
    if np.any(np.all(np.diff(v, axis=0) == 0, axis=1)):
        return
    pieces = split_polygonal(Polygonal(v), n)
    for s in range(len(v) - 1):
        ts = sorted((p.t0, p.t1) for p in pieces if p.segment == s)
        assert ts[0][0] == 0.0 and ts[-1][1] == 1.0
        assert all(a[1] == b[0] for a, b in zip(ts, ts[1:]))
        assert all(0 <= c < 2**n for p in pieces for c in p.coords)


def test_linear_field_martingale_is_constant():
    m = face_integral_martingale(linear_field([2.0, -1.0]), 5)
    for v in m.values:
        assert np.allclose(v, [2.0, -1.0], atol=1e-12)
    assert bloch_norm(m)[0] <= 1e-12


def test_quadratic_martingale_closed_form():
    q = np.array([1.0, 3.0])
    m = face_integral_martingale(quadratic_field(q), 4)
    for n, v in enumerate(m.values):
        k = np.arange(2**n)
        centers = (k + 0.5) / 2**n
        want = np.stack(np.meshgrid(2 * q[0] * centers, 2 * q[1] * centers, indexing="ij"), axis=-1)
        assert np.allclose(v, want, atol=1e-10)
    # neighbours differ by 2 q l along each axis
    _, prof = bloch_norm(m)
    assert prof[1:] == pytest.approx([2 * 3.0 * 2.0**-n for n in range(1, 5)])


def test_weierstrass_martingale_property():
    m = face_integral_martingale(tensor_sum_field(WeierstrassParams(), 2), 6)
    assert all(r <= a for r, a in zip(m.residuals(), martingale_residual_bounds(m)))
    assert max(m.residuals()) <= 1e-9


@given(st.integers(0, 2**16))
def test_leaves_give_martingale(seed):
    leaves = np.random.default_rng(seed).normal(size=(8, 8, 2))
    m = martingale_from_leaves(leaves, 2)
    assert m.depth == 3
    assert max(m.residuals()) <= 1e-12


def test_shape_validation():
    with pytest.raises(ValueError):
        VectorMartingale(2, [np.zeros((1, 1, 2)), np.zeros((3, 2, 2))])
    with pytest.raises(ValueError):
        Polygonal(np.array([[0.0, 0.0]]))
    with pytest.raises(ValueError):
        Polygonal(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]))


def test_defect_preconditions():
    m = constant_martingale([1.0, 0.0], 4)
    Q = DyadicCube(1, (0, 0))
    with pytest.raises(ValueError):
        conservative_defect(m, Q, Polygonal(np.array([[0.1, 0.1], [0.3, 0.3]])), 1)
    with pytest.raises(ValueError):
        conservative_defect(m, Q, Polygonal(np.array([[0.0, 0.1], [0.5, 0.1]])), 5)
    assert conservative_defect(m, Q, Polygonal(np.array([[0.0, 0.1], [0.5, 0.1]])), 0) == 0.0


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_random_polygonals_are_admissible(seed):
    rng = np.random.default_rng(seed)
    Q = DyadicCube(2, (1, 3))
    gamma = random_admissible_polygonal(Q, rng)
    m = constant_martingale([1.0, 1.0], 4)
    # constant martingales have zero defect on every admissible path
    assert conservative_defect(m, Q, gamma, 2) <= 1e-15


def test_quadratic_defect_scales_with_side():
    m = face_integral_martingale(quadratic_field([1.0, 1.0]), 8)
    _, sup = defect_audit(m, [1, 2, 3, 4], polygonals=30, ks=(1, 2))
    # the gradient is Lipschitz, so defect / l(Q) is O(l(Q))
    assert sup[4] < sup[1]
    assert all(v <= 4 * 2.0**-n for n, v in sup.items())


def test_boundedness_set_thresholds():
    m = constant_martingale([3.0, 4.0], 3)
    assert boundedness_mask(m, 5.0).all()
    assert not boundedness_mask(m, 4.99).any()
    assert len(boundedness_set(m, 5.0)) == 64
    with pytest.raises(ValueError):
        boundedness_mask(m, 0.0)


def test_json_dump_shape():
    m = constant_martingale([1.0], 2, dim=1)
    out = m.to_json()
    assert [len(g) for g in out] == [1, 2, 4]
    assert out[2][3] == {"cube": DyadicCube(2, (3,)).to_json(), "vector": [1.0]}
