from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zygmund.cantor import (
    CoverageError, StoppingParams, audit_stopping, build_covering, check_covering, cone_filter,
    maximal_deviation_cubes, polygonal_descent, selection_step, norm_drop_audit, theorem1_generations,
)
from zygmund.dyadic import DyadicCube, pairwise_disjoint, subcube_coords, unit_cube
from zygmund.fields import WeierstrassParams, linear_field, quadratic_field, tensor_sum_field
from zygmund.gradient import discrete_gradients


def brute_force_maximal(f, Q, thr, depth):
    """Enumerate every subcube and keep those over threshold with no ancestor over threshold."""
    ref = discrete_gradients(f, Q.level, np.array([Q.coords]))[0][0]
    over = set()
    for L in range(Q.level + 1, depth + 1):
        coords = subcube_coords(Q, L)
        V, _ = discrete_gradients(f, L, coords)
        hit = np.linalg.norm(V - ref, axis=1) >= thr
        over.update(DyadicCube(L, tuple(c)) for c in coords[hit].tolist())
    return {c for c in over if not any(c.ancestor(l) in over for l in range(Q.level + 1, c.level))}


FIELD = tensor_sum_field(WeierstrassParams(), 2) + linear_field([4.0, 1.0])


@settings(max_examples=10, deadline=None)
@given(st.floats(1.0, 8.0), st.integers(3, 7))
def test_search_matches_brute_force(thr, depth):
    fam = maximal_deviation_cubes(FIELD, unit_cube(2), thr, depth)
    assert set(fam.cubes) == brute_force_maximal(FIELD, unit_cube(2), thr, depth)
    assert pairwise_disjoint(fam.cubes + fam.unresolved)
    assert audit_stopping(FIELD, fam).passed


def test_audit_catches_tampering():
    fam = maximal_deviation_cubes(FIELD, unit_cube(2), 3.0, 6)
    assert audit_stopping(FIELD, fam).passed
    c = fam.cubes[0]
    fam.cubes[0] = c.children()[0] if c.level < 6 else c.parent()
    assert not audit_stopping(FIELD, fam).passed


def test_linear_field_selects_nothing():
    fam = maximal_deviation_cubes(linear_field([3.0, 2.0]), unit_cube(2), 0.5, 8)
    assert fam.cubes == []
    assert fam.unresolved_length_ratio > 0
    with pytest.raises(ValueError):
        maximal_deviation_cubes(FIELD, unit_cube(2), 0.0, 4)


def test_max_selected_stops_early():
    full = maximal_deviation_cubes(FIELD, unit_cube(2), 2.0, 8)
    part = maximal_deviation_cubes(FIELD, unit_cube(2), 2.0, 8, max_selected=1)
    assert 1 <= len(part.cubes) <= len(full.cubes)
    assert set(part.cubes) <= set(full.cubes)


def test_cone_filter_inequality():
    fam = maximal_deviation_cubes(FIELD, unit_cube(2), 2.0, 7)
    VQ = discrete_gradients(FIELD, 0, np.array([[0, 0]]))[0][0]
    u = -VQ / np.linalg.norm(VQ)
    kept = cone_filter(fam, VQ, u, 0.5)
    M = np.linalg.norm(VQ)
    assert np.all((kept.gradients - VQ) @ u >= (2 / 3) * 0.25 * M)
    assert len(kept) <= len(fam)


def test_norm_drop_reports():
    fam = maximal_deviation_cubes(FIELD, unit_cube(2), 2.0, 6)
    r = norm_drop_audit(fam, 5.0, 0.5)
    assert set(r) == {"C2", "applicable", "max_norm_ratio", "violations"}


def test_covering_and_path_on_quadratic():
    f = quadratic_field([40.0, 40.0]) + linear_field([20.0, 0.0])
    params = StoppingParams(M=20.0, epsilon=0.5, max_depth=7)
    res = selection_step(f, unit_cube(2), params)
    assert len(res.family.cubes) > 0
    cov = build_covering(res.family, -res.VQ / res.M)
    check_covering(unit_cube(2), cov)
    for run in res.runs:
        assert run.path.monotone
        assert run.cone_violations == 0


def test_uncovered_half_cube_detected():
    Q = unit_cube(2)
    fam = maximal_deviation_cubes(FIELD, Q, 3.0, 5)
    cov = build_covering(fam, [1.0, 0.0])[:1]
    with pytest.raises(CoverageError):
        check_covering(Q, cov, resolution=3)
    with pytest.raises(CoverageError):
        polygonal_descent(None, Q, StoppingParams(M=1, epsilon=0.5), cov, e=[1.0, 0.0])


def test_selection_step_small_depth():
    F = linear_field([50.0, 0.0]) + tensor_sum_field(WeierstrassParams(), 2) * 3.0
    res = selection_step(F, unit_cube(2), StoppingParams(M=50, epsilon=0.5, max_depth=9))
    assert np.allclose(res.VQ, [50.0, 0.0])
    assert audit_stopping(F, res.family).passed
    run = res.runs[0]
    assert run.path.monotone and run.cone_violations == 0
    assert run.mean_value["C"] < 100


def test_params_validation():
    with pytest.raises(ValueError):
        StoppingParams(M=0, epsilon=0.5)
    with pytest.raises(ValueError):
        StoppingParams(M=1, epsilon=1.0)
    p = StoppingParams(M=4, epsilon=0.5, max_depth=20, local_depth=3)
    assert p.N == 2.0 and p.depth_below(DyadicCube(5, (0, 0))) == 8


def test_two_generations_small():
    params = StoppingParams(M=3.0, epsilon=0.5, max_depth=30, local_depth=8)
    res = theorem1_generations(tensor_sum_field(WeierstrassParams(), 2), params, 2, r_budget=2, limit_samples=50)
    sizes = [len(g.cubes) for g in res.generations]
    assert sizes[0] == 1 and len(sizes) == 2 and sizes[1] > 0
    assert res.limit_audit["violations"] == 0
    for c in res.generations[1].cubes:
        assert res.generations[1].parent_links[c].contains_cube(c)
    assert res.constants is not None and 0 < res.constants.K0
