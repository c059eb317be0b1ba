from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from zygmund.dimension import (
    ChildlessCubeError, GenerationFamily, box_count, box_counts, boxdim_fit, build_mass_measure,
    dimension_formula, frostman_audit, frostman_constant_bound, nested_constants, packing_constant,
    ratio_quarter_cantor, scale_level, validate_generations,
)
from zygmund.dyadic import DyadicCube


def test_fixture_constants():
    gens = ratio_quarter_cantor(6)
    assert validate_generations(gens) == []
    c = nested_constants(gens, 1.0)
    assert c.eta0 == 0.25 and c.K0 == 0.5
    assert c.alpha == 0.5
    assert dimension_formula(1.0, 0.25, 0.5) == 0.5


@given(st.floats(0.01, 0.4), st.floats(0.0, 1.0), st.floats(0.5, 3.0))
def test_formula_within_one_of_s(eta0, frac, s):
    K0 = eta0 + frac * (1 - eta0)
    if not eta0 < K0 < 1:
        return
    # log K0 / log eta0 lies in (0, 1)
    a = dimension_formula(s, eta0, K0)
    assert s - 1 <= a <= s


def test_formula_domain():
    with pytest.raises(ValueError):
        dimension_formula(1.0, 0.5, 0.25)
    with pytest.raises(ValueError):
        dimension_formula(0.0, 0.25, 0.5)


@given(st.integers(1, 8))
def test_masses_exact_and_conserved(n):
    gens = ratio_quarter_cantor(n)
    mu = build_mass_measure(gens, 1.0, exact=True)
    for g in gens:
        assert mu.generation_total(g.index) == 1
        assert all(mu.mass(c) == Fraction(1, 2 ** (g.index - 1)) for c in g.cubes)


def test_float_masses_for_fractional_s():
    mu = build_mass_measure(ratio_quarter_cantor(4), 0.5)
    assert not mu.exact
    assert mu.generation_total(4) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        build_mass_measure(ratio_quarter_cantor(2), 0.5, exact=True)


def test_frostman_bound_holds_on_fixture():
    gens = ratio_quarter_cantor(7)
    c = nested_constants(gens)
    fa = frostman_audit(build_mass_measure(gens, 1.0), 0.5, 12)
    assert fa.max_ratio <= frostman_constant_bound(1.0, c.eta0, c.K0, c.Ktilde)
    assert fa.max_ratio == pytest.approx(1.0)
    assert len(fa.per_level) == 13


def test_frostman_detects_concentration():
    # one tiny deep cube carrying all mass violates any alpha > 0 growth bound with a small constant
    Q = DyadicCube(0, (0,))
    deep = DyadicCube(10, (0,))
    gens = [GenerationFamily(1, [Q]), GenerationFamily(2, [deep], {deep: Q})]
    fa = frostman_audit(build_mass_measure(gens, 1.0), 1.0, 10)
    assert fa.max_ratio == pytest.approx(2.0**10)
    assert fa.witness == deep


def test_childless_cube_rejected():
    Q = DyadicCube(0, (0,))
    a, b = DyadicCube(1, (0,)), DyadicCube(1, (1,))
    c = DyadicCube(2, (0,))
    gens = [GenerationFamily(1, [Q]), GenerationFamily(2, [a, b], {a: Q, b: Q}), GenerationFamily(3, [c], {c: a})]
    with pytest.raises(ChildlessCubeError):
        build_mass_measure(gens, 1.0)


def test_validate_finds_bad_links():
    Q = DyadicCube(1, (0,))
    R = DyadicCube(2, (3,))
    gens = [GenerationFamily(1, [Q]), GenerationFamily(2, [R], {R: Q})]
    assert any("not inside" in p for p in validate_generations(gens))


def test_packing_constant():
    cubes = [DyadicCube(2, (0,)), DyadicCube(2, (1,))]
    ratio, witness = packing_constant(cubes, 1.0, top_level=0)
    assert ratio == pytest.approx(1.0)
    assert witness == DyadicCube(1, (0,))


def test_box_counting_line_and_points():
    cubes = [DyadicCube(0, (0, 0))]
    assert box_count(cubes, 0.25) == 16
    pts = np.stack([np.linspace(0, 1, 5000, endpoint=False)] * 2, axis=1)
    fit = boxdim_fit(box_counts(pts, range(1, 10)))
    assert fit.slope == pytest.approx(1.0, abs=0.01)
    assert boxdim_fit([(0.5, 3), (0.25, 3), (0.125, 3)]).degenerate


def test_scale_level():
    assert scale_level(0.125) == 3
    with pytest.raises(ValueError):
        scale_level(0.3)


def test_box_slope_on_fixture():
    gens = ratio_quarter_cantor(7)
    fit = boxdim_fit(box_counts(gens[-1].cubes, range(2, 13, 2)))
    assert fit.slope == pytest.approx(0.5, abs=1e-12)


def test_generation_json_round_trip():
    g = ratio_quarter_cantor(3)[2]
    h = GenerationFamily.from_json(g.to_json())
    assert h.cubes == g.cubes and h.parent_links == g.parent_links
