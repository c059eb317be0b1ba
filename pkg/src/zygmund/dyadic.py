"""Dyadic cubes with exact integer geometry.

A cube of level ``n`` with integer coordinates ``k`` is the half-open box
``prod_i [k_i 2^-n, (k_i + 1) 2^-n)``.  Coordinates are Python integers, so
the combinatorics (parents, children, adjacency) is exact at any level; real
numbers only appear when a cube is turned into points.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True, order=True)
class DyadicCube:
    level: int
    coords: tuple[int, ...]

    def __post_init__(self):
        if self.level < 0:
            raise ValueError(f"level must be nonnegative, got {self.level}")
        if len(self.coords) == 0:
            raise ValueError("a cube needs at least one coordinate")
        object.__setattr__(self, "coords", tuple(int(c) for c in self.coords))

    @property
    def dim(self) -> int:
        return len(self.coords)

    @property
    def side(self) -> float:
        return math.ldexp(1.0, -self.level)

    @property
    def side_exact(self) -> Fraction:
        return Fraction(1, 2**self.level)

    @property
    def origin(self) -> np.ndarray:
        return np.array([math.ldexp(float(k), -self.level) for k in self.coords])

    @property
    def origin_exact(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(k, 2**self.level) for k in self.coords)

    @property
    def center(self) -> np.ndarray:
        return np.array([math.ldexp(2.0 * k + 1.0, -self.level - 1) for k in self.coords])

    @property
    def diameter(self) -> float:
        return self.side * math.sqrt(self.dim)

    def children(self) -> list[DyadicCube]:
        """The 2^d children, ordered with the first axis varying slowest."""
        base = tuple(2 * k for k in self.coords)
        return [
            DyadicCube(self.level + 1, tuple(b + e for b, e in zip(base, eps)))
            for eps in itertools.product((0, 1), repeat=self.dim)
        ]

    def parent(self) -> DyadicCube:
        if self.level == 0:
            raise ValueError("a level-0 cube has no dyadic parent")
        return DyadicCube(self.level - 1, tuple(k >> 1 for k in self.coords))

    def ancestor(self, level: int) -> DyadicCube:
        if not 0 <= level <= self.level:
            raise ValueError(f"ancestor level {level} outside [0, {self.level}]")
        shift = self.level - level
        return DyadicCube(level, tuple(k >> shift for k in self.coords))

    def contains_cube(self, other: DyadicCube) -> bool:
        if other.dim != self.dim or other.level < self.level:
            return False
        return other.ancestor(self.level) == self

    def contains_point(self, x) -> bool:
        return locate(x, self.level) == self

    def to_json(self) -> dict:
        return {"dim": self.dim, "level": self.level, "coords": list(self.coords)}

    @classmethod
    def from_json(cls, obj: dict) -> DyadicCube:
        cube = cls(int(obj["level"]), tuple(int(c) for c in obj["coords"]))
        if "dim" in obj and int(obj["dim"]) != cube.dim:
            raise ValueError(f"dim {obj['dim']} does not match {len(cube.coords)} coords")
        return cube

    def label(self) -> str:
        """Compact text form used in CSV cells: ``level:k1,k2``."""
        return f"{self.level}:" + ",".join(str(k) for k in self.coords)


def unit_cube(dim: int) -> DyadicCube:
    return DyadicCube(0, (0,) * dim)


def _floor_scaled(x, n: int) -> int:
    if isinstance(x, Fraction) or isinstance(x, int):
        return math.floor(Fraction(x) * 2**n)
    xf = float(x)
    if not math.isfinite(xf):
        raise ValueError(f"non-finite coordinate {x!r}")
    return math.floor(math.ldexp(xf, n))


def locate(x, n: int) -> DyadicCube:
    """The level-``n`` cube containing ``x`` (half-open convention)."""
    if n < 0:
        raise ValueError(f"level must be nonnegative, got {n}")
    if np.isscalar(x) or isinstance(x, Fraction):
        x = (x,)
    return DyadicCube(n, tuple(_floor_scaled(xi, n) for xi in x))


def locate_many(points, n: int) -> np.ndarray:
    """Integer coordinates (m, d) of the level-``n`` cubes containing each row.

    Exact for float64 and longdouble input as long as the result fits int64.
    """
    pts = np.asarray(points)
    if pts.ndim == 1:
        pts = pts[:, None]
    if n > 62:
        raise ValueError("locate_many supports levels up to 62")
    scaled = np.floor(np.ldexp(pts, n)) if pts.dtype == np.float64 else np.floor(pts * pts.dtype.type(2.0**n))
    return scaled.astype(np.int64)


def vertexes(Q: DyadicCube) -> list[np.ndarray]:
    o = Q.origin
    return [o + Q.side * np.array(eps, dtype=float) for eps in itertools.product((0, 1), repeat=Q.dim)]


def adjacent(Q: DyadicCube, R: DyadicCube) -> bool:
    """True when the closures of two same-level cubes intersect."""
    if Q.dim != R.dim:
        raise ValueError(f"dimension mismatch: {Q.dim} vs {R.dim}")
    if Q.level != R.level:
        raise ValueError(f"level mismatch: {Q.level} vs {R.level}")
    return all(abs(a - b) <= 1 for a, b in zip(Q.coords, R.coords))


def neighbors(Q: DyadicCube, within: DyadicCube | None = None) -> list[DyadicCube]:
    """Same-level cubes adjacent to ``Q`` (excluding ``Q``), optionally inside ``within``."""
    out = []
    for off in itertools.product((-1, 0, 1), repeat=Q.dim):
        if not any(off):
            continue
        R = DyadicCube(Q.level, tuple(k + o for k, o in zip(Q.coords, off)))
        if within is None or within.contains_cube(R):
            out.append(R)
    return out


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box ``prod [lo_i, hi_i]``."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)

    def contains(self, points, open_: bool = False) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        if open_:
            return np.all((pts > lo) & (pts < hi), axis=1)
        return np.all((pts >= lo) & (pts <= hi), axis=1)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(count, self.dim))


def dilate(Q: DyadicCube, factor: float) -> Box:
    """Concentric closed box of side ``factor * side(Q)``."""
    if not factor > 0:
        raise ValueError(f"dilation factor must be positive, got {factor}")
    c = Q.center
    half = 0.5 * factor * Q.side
    return Box(tuple(c - half), tuple(c + half))


def subcube_coords(Q: DyadicCube, level: int) -> np.ndarray:
    """All level-``level`` descendants of ``Q`` as an (m, d) int64 array."""
    if level < Q.level:
        raise ValueError("descendant level must not be coarser than the cube")
    m = 1 << (level - Q.level)
    base = np.array(Q.coords, dtype=np.int64) * m
    axes = [np.arange(m, dtype=np.int64)] * Q.dim
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, Q.dim)
    return grid + base


def cubes_from_coords(level: int, coords: Iterable[Sequence[int]]) -> list[DyadicCube]:
    return [DyadicCube(level, tuple(int(c) for c in row)) for row in coords]


def pairwise_disjoint(cubes: Sequence[DyadicCube]) -> bool:
    """No cube of the family contains another (dyadic cubes either nest or are disjoint)."""
    seen = set(cubes)
    if len(seen) != len(cubes):
        return False
    for Q in cubes:
        for lvl in range(Q.level):
            if Q.ancestor(lvl) in seen:
                return False
    return True
