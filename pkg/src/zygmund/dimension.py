"""Nested cube families, their Frostman measures, and dimension estimates."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .dyadic import DyadicCube, locate_many, pairwise_disjoint


class ChildlessCubeError(ValueError):
    """An interior generation cube has no children, so its mass would be stranded."""


@dataclass
class GenerationFamily:
    """Generation ``index`` of a nested construction; ``parent_links`` maps child -> parent."""

    index: int
    cubes: list[DyadicCube]
    parent_links: dict[DyadicCube, DyadicCube] = field(default_factory=dict)

    def children_of(self) -> dict[DyadicCube, list[DyadicCube]]:
        out: dict[DyadicCube, list[DyadicCube]] = defaultdict(list)
        for c in self.cubes:
            out[self.parent_links[c]].append(c)
        return out

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "cubes": [
                {"cube": c.to_json(), "parent": self.parent_links[c].to_json() if c in self.parent_links else None}
                for c in self.cubes
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> GenerationFamily:
        cubes, links = [], {}
        for row in obj["cubes"]:
            c = DyadicCube.from_json(row["cube"])
            cubes.append(c)
            if row.get("parent") is not None:
                links[c] = DyadicCube.from_json(row["parent"])
        return cls(int(obj["index"]), cubes, links)


def validate_generations(gens: Sequence[GenerationFamily]) -> list[str]:
    """Structural problems (empty list when the family is a valid nested system)."""
    problems = []
    for n, g in enumerate(gens):
        if not pairwise_disjoint(g.cubes):
            problems.append(f"generation {g.index}: cubes overlap")
        if n == 0:
            continue
        prev = set(gens[n - 1].cubes)
        for c in g.cubes:
            p = g.parent_links.get(c)
            if p is None:
                problems.append(f"generation {g.index}: {c.label()} has no parent link")
            elif p not in prev:
                problems.append(f"generation {g.index}: parent {p.label()} not in previous generation")
            elif not p.contains_cube(c):
                problems.append(f"generation {g.index}: {c.label()} not inside parent {p.label()}")
    return problems


# ---------------------------------------------------------------------------
# size, mass and packing constants of a nested family


def dimension_formula(s: float, eta0: float, K0: float) -> float:
    """``s - log K0 / log eta0`` for ``0 < eta0 < K0 < 1``."""
    if not 0 < eta0 < K0 < 1:
        raise ValueError(f"need 0 < eta0 < K0 < 1, got eta0={eta0}, K0={K0}")
    if not s > 0:
        raise ValueError(f"s must be positive, got {s}")
    return s - math.log2(K0) / math.log2(eta0)


def frostman_constant_bound(s: float, eta0: float, K0: float, Ktilde: float) -> float:
    """Growth constant ``3^s Ktilde eta0^(-log K0 / log eta0)``."""
    return 3.0**s * Ktilde * eta0 ** (-math.log2(K0) / math.log2(eta0))


def _lengths(cubes: Sequence[DyadicCube], s: float, exact: bool):
    if exact:
        si = int(s)
        return [Fraction(1, 2 ** (c.level * si)) for c in cubes]
    return [2.0 ** (-c.level * s) for c in cubes]


def packing_constant(cubes: Sequence[DyadicCube], s: float = 1.0, top_level: int | None = None):
    """``max_R sum_{Q subset R} l(Q)^s / l(R)^s`` over dyadic ``R`` at levels ``top_level..max level``.

    Returns ``(ratio, witness R)``.  Cubes larger than ``R`` do not count toward it.
    """
    if not cubes:
        return 0.0, None
    d = cubes[0].dim
    levels = np.array([c.level for c in cubes])
    coords = np.array([c.coords for c in cubes], dtype=np.int64).reshape(-1, d)
    weights = np.ldexp(1.0, -levels) ** s
    lo = int(levels.min()) if top_level is None else top_level
    best, witness = 0.0, None
    for L in range(lo, int(levels.max()) + 1):
        sel = levels >= L
        anc = coords[sel] >> (levels[sel] - L)[:, None]
        keys, inv = np.unique(anc, axis=0, return_inverse=True)
        sums = np.bincount(inv.reshape(-1), weights=weights[sel])
        ratio = sums / 2.0 ** (-L * s)
        i = int(np.argmax(ratio))
        if ratio[i] > best:
            best, witness = float(ratio[i]), DyadicCube(L, tuple(int(k) for k in keys[i]))
    return best, witness


@dataclass(frozen=True)
class NestedConstants:
    s: float
    eta0: float
    K0: float
    Ktilde: float

    @property
    def C0(self) -> float:
        return max(1.0 / self.K0, self.Ktilde) if self.K0 > 0 else math.inf

    @property
    def formula_applicable(self) -> bool:
        return 0 < self.eta0 < self.K0 < 1

    @property
    def alpha(self) -> float | None:
        return dimension_formula(self.s, self.eta0, self.K0) if self.formula_applicable else None

    @property
    def frostman_bound(self) -> float | None:
        if not self.formula_applicable:
            return None
        return frostman_constant_bound(self.s, self.eta0, self.K0, self.Ktilde)

    def to_json(self) -> dict:
        return {
            "s": self.s,
            "eta0": self.eta0,
            "K0": self.K0,
            "Ktilde": self.Ktilde,
            "C0": self.C0,
            "alpha": self.alpha,
            "frostman_bound": self.frostman_bound,
        }


def nested_constants(gens: Sequence[GenerationFamily], s: float = 1.0) -> NestedConstants:
    """Measured (a) size ratio, (b) mass ratio and (c) packing constants of a nested system."""
    eta0, K0 = 0.0, math.inf
    for g in gens[1:]:
        for parent, kids in g.children_of().items():
            lp = 2.0 ** (-parent.level)
            eta0 = max(eta0, max(2.0 ** (-c.level) / lp for c in kids))
            K0 = min(K0, sum(2.0 ** (-c.level * s) for c in kids) / lp**s)
    Ktilde = max(packing_constant(g.cubes, s, top_level=0)[0] for g in gens)
    return NestedConstants(s, eta0, 0.0 if K0 is math.inf else K0, Ktilde)


# ---------------------------------------------------------------------------
# Mass measure


@dataclass
class MassMeasure:
    masses: dict[DyadicCube, Fraction | float]
    generations: list[GenerationFamily]
    s: float
    exact: bool

    def mass(self, cube: DyadicCube):
        return self.masses[cube]

    def generation_total(self, n: int):
        total = Fraction(0) if self.exact else 0.0
        for c in self.generations[n - 1].cubes:
            total += self.masses[c]
        return total

    @property
    def deepest(self) -> GenerationFamily:
        return self.generations[-1]

    def to_json(self) -> dict:
        return {
            "s": self.s,
            "exact": self.exact,
            "masses": [
                {"generation": g.index, "cube": c.to_json(), "mass": str(self.masses[c]) if self.exact else self.masses[c]}
                for g in self.generations
                for c in g.cubes
            ],
        }


def build_mass_measure(gens: Sequence[GenerationFamily], s: float, exact: bool | None = None) -> MassMeasure:
    """Distribute unit mass down the generations in proportion to ``l(Q)^s``.

    Exact rational arithmetic is used when ``s`` is an integer (dyadic side lengths).
    """
    if not gens:
        raise ValueError("need at least one generation")
    if exact is None:
        exact = float(s).is_integer()
    if exact and not float(s).is_integer():
        raise ValueError("exact masses need an integer exponent s")
    first = gens[0].cubes
    w = _lengths(first, s, exact)
    total = sum(w)
    masses = {c: wi / total for c, wi in zip(first, w)}
    for n in range(1, len(gens)):
        kids = gens[n].children_of()
        for parent in gens[n - 1].cubes:
            if parent not in kids:
                raise ChildlessCubeError(f"generation {gens[n - 1].index} cube {parent.label()} has no children")
        for parent, children in kids.items():
            if parent not in masses:
                raise ValueError(f"parent {parent.label()} is not a generation-{gens[n - 1].index} cube")
            w = _lengths(children, s, exact)
            total = sum(w)
            for c, wi in zip(children, w):
                masses[c] = masses[parent] * wi / total
    return MassMeasure(masses, list(gens), s, exact)


@dataclass(frozen=True)
class FrostmanAudit:
    max_ratio: float
    witness: DyadicCube | None
    per_level: tuple[float, ...]

    def __iter__(self):
        return iter((self.max_ratio, self.witness))


def frostman_audit(mu: MassMeasure, alpha: float, depth: int) -> FrostmanAudit:
    """``max mu(R) / l(R)^alpha`` over every dyadic cube ``R`` of level ``<= depth``.

    ``mu(R)`` sums the deepest-generation masses of cubes inside ``R``; a
    deepest cube larger than ``R`` contributes its mass in proportion to volume.
    """
    deep = mu.deepest.cubes
    if not deep:
        return FrostmanAudit(0.0, None, ())
    d = deep[0].dim
    levels = np.array([c.level for c in deep])
    coords = np.array([c.coords for c in deep], dtype=np.int64).reshape(-1, d)
    mass = np.array([float(mu.masses[c]) for c in deep])
    best, witness, per_level = 0.0, None, []
    for L in range(depth + 1):
        scale = 2.0 ** (L * alpha)
        level_best, level_witness = 0.0, None
        sel = levels >= L
        if np.any(sel):
            anc = coords[sel] >> (levels[sel] - L)[:, None]
            keys, inv = np.unique(anc, axis=0, return_inverse=True)
            sums = np.bincount(inv.reshape(-1), weights=mass[sel]) * scale
            i = int(np.argmax(sums))
            level_best, level_witness = float(sums[i]), DyadicCube(L, tuple(int(k) for k in keys[i]))
        big = ~sel
        if np.any(big):
            share = mass[big] * 2.0 ** (-d * (L - levels[big])) * scale
            j = int(np.argmax(share))
            if share[j] > level_best:
                idx = np.flatnonzero(big)[j]
                level_best = float(share[j])
                level_witness = DyadicCube(L, tuple(int(k) << (L - int(levels[idx])) for k in coords[idx]))
        per_level.append(level_best)
        if level_best > best:
            best, witness = level_best, level_witness
    return FrostmanAudit(best, witness, tuple(per_level))


# ---------------------------------------------------------------------------
# Box counting


def scale_level(scale: float) -> int:
    k = -math.log2(scale)
    if not float(k).is_integer() or k < 0:
        raise ValueError(f"scale {scale} is not a dyadic scale 2^-k")
    return int(k)


def box_count(data, scale: float) -> int:
    """Number of level-``k`` dyadic cubes (``scale = 2^-k``) meeting the input.

    ``data`` is either a sequence of :class:`DyadicCube` or an ``(m, d)`` point array.
    """
    k = scale_level(scale)
    if isinstance(data, (list, tuple)) and data and isinstance(data[0], DyadicCube):
        d = data[0].dim
        count = 0
        fine = set()
        for c in data:
            if c.level >= k:
                fine.add(c.ancestor(k))
            else:
                count += 2 ** (d * (k - c.level))
        return count + len(fine)
    pts = np.asarray(data)
    if pts.size == 0:
        raise ValueError("box counting needs a nonempty input")
    if pts.ndim == 1:
        pts = pts[:, None]
    return int(np.unique(locate_many(pts, k), axis=0).shape[0])


def box_counts(data, levels: Iterable[int]) -> list[tuple[float, int]]:
    return [(math.ldexp(1.0, -k), box_count(data, math.ldexp(1.0, -k))) for k in levels]


@dataclass(frozen=True)
class BoxDimFit:
    slope: float
    residual: float
    degenerate: bool = False

    def __iter__(self):
        return iter((self.slope, self.residual))


def boxdim_fit(counts: Sequence[tuple[float, int]]) -> BoxDimFit:
    """Least-squares slope of ``log2 count`` against ``log2(1/scale)``."""
    if len(counts) < 3:
        raise ValueError("box-dimension fit needs at least 3 scales")
    x = np.array([-math.log2(s) for s, _ in counts])
    y = np.array([math.log2(c) for _, c in counts])
    if np.all(y == y[0]):
        return BoxDimFit(0.0, 0.0, True)
    slope, icept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + icept)) ** 2)))
    return BoxDimFit(float(slope), resid, False)


# ---------------------------------------------------------------------------
# Fixture


def ratio_quarter_cantor(generations: int) -> list[GenerationFamily]:
    """Keep the first and last quarter of every interval: similarity dimension 1/2.

    Generation ``n`` (1-based) lives at level ``2(n-1)``.
    """
    if generations < 1:
        raise ValueError("need at least one generation")
    gens = [GenerationFamily(1, [DyadicCube(0, (0,))], {})]
    for n in range(2, generations + 1):
        cubes, links = [], {}
        for Q in gens[-1].cubes:
            k = Q.coords[0]
            for c in (4 * k, 4 * k + 3):
                child = DyadicCube(Q.level + 2, (c,))
                cubes.append(child)
                links[child] = Q
        gens.append(GenerationFamily(n, cubes, links))
    return gens
