"""Dyadic vector martingales on the unit cube: construction from face
integrals, Bloch norms, exact line integrals and the conservative defect.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dyadic import DyadicCube
from .fields import ScalarField


class QuadratureError(RuntimeError):
    """Face quadrature did not reach its tolerance on some cube."""


@dataclass
class VectorMartingale:
    """``values[n]`` has shape ``(2^n,)*dim + (components,)``: the value on each level-n cube."""

    dim: int
    values: list[np.ndarray]
    errors: list[np.ndarray] | None = None
    tolerance: float = 0.0

    def __post_init__(self):
        for n, v in enumerate(self.values):
            if v.shape[: self.dim] != (2**n,) * self.dim:
                raise ValueError(f"generation {n} has shape {v.shape}, expected {(2**n,) * self.dim} + (m,)")

    @property
    def depth(self) -> int:
        return len(self.values) - 1

    @property
    def components(self) -> int:
        return self.values[0].shape[-1]

    def value(self, n: int, cube: DyadicCube) -> np.ndarray:
        if cube.level != n:
            raise ValueError("cube level must match the generation")
        return self.values[n][tuple(cube.coords)]

    def lookup(self, n: int, coords: np.ndarray) -> np.ndarray:
        coords = np.asarray(coords, dtype=np.int64)
        return self.values[n][tuple(coords.T)]

    def children_mean(self, n: int) -> np.ndarray:
        """Average of the children values, arranged like ``values[n]``."""
        v = self.values[n + 1]
        d = self.dim
        shape = []
        for _ in range(d):
            shape += [2**n, 2]
        v = v.reshape(*shape, v.shape[-1])
        return v.mean(axis=tuple(2 * i + 1 for i in range(d)))

    def residuals(self) -> list[float]:
        """Per-generation max ``|mean(children) - parent|`` (componentwise sup)."""
        return [float(np.max(np.abs(self.children_mean(n) - self.values[n]))) for n in range(self.depth)]

    def to_json(self) -> list[list[dict]]:
        out = []
        for n, v in enumerate(self.values):
            rows = []
            for idx in itertools.product(range(2**n), repeat=self.dim):
                rows.append({"cube": DyadicCube(n, idx).to_json(), "vector": [float(x) for x in v[idx]]})
            out.append(rows)
        return out


def constant_martingale(c: Sequence[float], depth: int, dim: int | None = None) -> VectorMartingale:
    c = np.asarray(c, dtype=float)
    dim = len(c) if dim is None else dim
    return VectorMartingale(dim, [np.broadcast_to(c, (2**n,) * dim + c.shape).copy() for n in range(depth + 1)])


def martingale_from_leaves(leaves: np.ndarray, dim: int) -> VectorMartingale:
    """Martingale whose deepest generation is ``leaves``; coarser values are cube averages."""
    leaves = np.asarray(leaves, dtype=float)
    if leaves.ndim == dim:
        leaves = leaves[..., None]
    depth = int(round(math.log2(leaves.shape[0])))
    values = [leaves]
    for n in range(depth, 0, -1):
        v = values[0]
        shape = []
        for _ in range(dim):
            shape += [2 ** (n - 1), 2]
        values.insert(0, v.reshape(*shape, v.shape[-1]).mean(axis=tuple(2 * i + 1 for i in range(dim))))
    return VectorMartingale(dim, values)


# ---------------------------------------------------------------------------
# Face-integral martingale


def _grid_origins(n: int, d: int) -> np.ndarray:
    axes = [np.arange(2**n, dtype=float) * math.ldexp(1.0, -n)] * d
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)


def _midpoint_face(f: ScalarField, axis: int, coord: np.ndarray, lo: np.ndarray, side: float, r: int) -> np.ndarray:
    """Composite midpoint rule with ``2^r`` nodes per face dimension."""
    d = f.dim
    m = lo.shape[0]
    others = [j for j in range(d) if j != axis]
    k = 2**r
    nodes = (np.arange(k) + 0.5) / k * side
    grids = np.stack(np.meshgrid(*([nodes] * len(others)), indexing="ij"), axis=-1).reshape(-1, len(others)) if others else np.zeros((1, 0))
    pts = np.empty((m, len(grids), d))
    pts[:, :, axis] = coord[:, None]
    for t, j in enumerate(others):
        pts[:, :, j] = lo[:, j][:, None] + grids[:, t][None, :]
    vals, _ = f.evaluate(pts.reshape(-1, d))
    return vals.reshape(m, len(grids)).mean(axis=1) * side ** (d - 1)


def face_integrals(f: ScalarField, axis: int, coord: np.ndarray, lo: np.ndarray, side: float, tol: float, max_refine: int = 10):
    """Face integrals with error estimates: closed form when the field offers one,
    otherwise dyadic midpoint refinement until successive values agree to ``tol * side^(d-1)``."""
    if f.has_face_integral:
        return f.face_integral(axis, coord, lo, side)
    d = f.dim
    target = tol * side ** (d - 1)
    prev = _midpoint_face(f, axis, coord, lo, side, 0)
    out = prev.copy()
    err = np.full(prev.shape, np.inf)
    todo = np.arange(len(prev))
    for r in range(1, max_refine + 1):
        cur = _midpoint_face(f, axis, coord[todo], lo[todo], side, r)
        diff = np.abs(cur - prev[todo])
        out[todo] = cur
        err[todo] = diff
        done = diff < target
        prev[todo] = cur
        todo = todo[~done]
        if len(todo) == 0:
            return out, err
    bad = lo[todo[0]]
    raise QuadratureError(f"face quadrature on axis {axis} at cube origin {tuple(bad)} did not reach {target:.3g}")


def face_integral_martingale(f: ScalarField, depth: int, tol: float = 1e-10) -> VectorMartingale:
    """``S_n|Q`` component ``i`` = (integral over the upper ``i``-face minus the lower) / ``l^d``."""
    d = f.dim
    values, errors = [], []
    for n in range(depth + 1):
        side = math.ldexp(1.0, -n)
        lo = _grid_origins(n, d)
        S = np.empty((lo.shape[0], d))
        E = np.zeros(lo.shape[0])
        for i in range(d):
            plus, ep = face_integrals(f, i, lo[:, i] + side, lo, side, tol)
            minus, em = face_integrals(f, i, lo[:, i], lo, side, tol)
            S[:, i] = (plus - minus) / side**d
            E = np.maximum(E, (ep + em) / side**d)
        values.append(S.reshape((2**n,) * d + (d,)))
        errors.append(E.reshape((2**n,) * d))
    tolerance = max(float(e.max()) for e in errors)
    return VectorMartingale(d, values, errors, tolerance)


def martingale_residual_bounds(m: VectorMartingale) -> list[float]:
    """Per-generation allowance for the martingale residual: quadrature errors plus rounding."""
    out = []
    eps = np.finfo(float).eps
    for n in range(m.depth):
        err_parent = m.errors[n] if m.errors is not None else 0.0
        err_kids = m.errors[n + 1] if m.errors is not None else 0.0
        scale = float(np.max(np.abs(m.values[n + 1]))) if m.values[n + 1].size else 0.0
        out.append(float(np.max(err_parent)) + float(np.max(err_kids)) + 64 * eps * scale)
    return out


# ---------------------------------------------------------------------------
# Bloch norm


def _neighbor_offsets(d: int) -> list[tuple[int, ...]]:
    """Half of the nonzero offsets in ``{-1,0,1}^d`` (one per unordered neighbor pair)."""
    out = []
    for off in itertools.product((-1, 0, 1), repeat=d):
        if any(off) and next(o for o in off if o != 0) > 0:
            out.append(off)
    return out


def bloch_norm(m: VectorMartingale) -> tuple[float, list[float]]:
    """Sup of ``|S_n|Q - S_n|Q'|`` (max over components) over adjacent same-level cubes.

    Returns the overall sup and the per-generation sequence.
    """
    if m.depth < 1:
        raise ValueError("the Bloch norm needs depth at least 1")
    profile = []
    for v in m.values:
        best = 0.0
        for off in _neighbor_offsets(m.dim):
            a = tuple(slice(max(o, 0), v.shape[i] + min(o, 0)) for i, o in enumerate(off))
            b = tuple(slice(max(-o, 0), v.shape[i] + min(-o, 0)) for i, o in enumerate(off))
            if v[a].size:
                best = max(best, float(np.max(np.abs(v[a] - v[b]))))
        profile.append(best)
    return max(profile), profile


# ---------------------------------------------------------------------------
# Line integrals


@dataclass(frozen=True)
class Polygonal:
    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or len(v) < 2:
            raise ValueError("a polygonal needs at least two vertices")
        if np.any(np.all(np.diff(v, axis=0) == 0, axis=1)):
            raise ValueError("consecutive vertices must be distinct")
        object.__setattr__(self, "vertices", v)

    @property
    def start(self) -> np.ndarray:
        return self.vertices[0]

    @property
    def end(self) -> np.ndarray:
        return self.vertices[-1]

    def concat(self, other: Polygonal) -> Polygonal:
        if not np.array_equal(self.end, other.start):
            raise ValueError("polygonals do not join")
        return Polygonal(np.vstack([self.vertices, other.vertices[1:]]))


@dataclass(frozen=True)
class Piece:
    segment: int
    t0: float
    t1: float
    coords: tuple[int, ...]
    on_face: bool


def split_polygonal(gamma: Polygonal, n: int, within: DyadicCube | None = None) -> list[Piece]:
    """Split every segment at the level-``n`` grid hyperplanes.

    Each piece is assigned to the half-open cube containing its midpoint,
    clamped into ``within`` (default the unit cube) so that pieces on its upper
    boundary stay inside.  ``on_face`` marks pieces lying in a grid hyperplane.
    """
    d = gamma.vertices.shape[1]
    within = within if within is not None else DyadicCube(0, (0,) * d)
    if n < within.level:
        raise ValueError("generation is coarser than the clamping cube")
    shift = n - within.level
    lo = np.array(within.coords, dtype=np.int64) << shift
    hi = lo + (1 << shift) - 1
    scale = math.ldexp(1.0, n)
    pieces = []
    for s, (p, q) in enumerate(zip(gamma.vertices[:-1], gamma.vertices[1:])):
        ts = {0.0, 1.0}
        for i in range(d):
            if q[i] == p[i]:
                continue
            a, b = sorted((p[i] * scale, q[i] * scale))
            for j in range(math.floor(a) + 1, math.ceil(b)):
                ts.add((j / scale - p[i]) / (q[i] - p[i]))
        ts = sorted(t for t in ts if 0.0 <= t <= 1.0)
        for t0, t1 in zip(ts[:-1], ts[1:]):
            if t1 <= t0:
                continue
            mid = p + 0.5 * (t0 + t1) * (q - p)
            k = np.floor(mid * scale).astype(np.int64)
            k = np.minimum(np.maximum(k, lo), hi)
            on_face = any(q[i] == p[i] and float(p[i] * scale).is_integer() for i in range(d))
            pieces.append(Piece(s, t0, t1, tuple(int(x) for x in k), on_face))
    return pieces


def line_integral(m: VectorMartingale, n: int, gamma: Polygonal, within: DyadicCube | None = None) -> float:
    """``sum over pieces <S_n(piece cube), q - p> (t1 - t0)`` with exact splitting."""
    if not 0 <= n <= m.depth:
        raise ValueError(f"generation {n} outside 0..{m.depth}")
    v = gamma.vertices
    if np.any(v < 0) or np.any(v > 1):
        raise ValueError("polygonal leaves the closed unit cube")
    terms = []
    for pc in split_polygonal(gamma, n, within):
        seg = v[pc.segment + 1] - v[pc.segment]
        S = m.values[n][pc.coords]
        terms.append(float(S @ seg) * (pc.t1 - pc.t0))
    return math.fsum(terms)


def _spans_parallel_faces(Q: DyadicCube, gamma: Polygonal) -> bool:
    o, s = Q.origin, Q.side
    a, b = gamma.start, gamma.end
    for i in range(Q.dim):
        lo, hi = o[i], o[i] + s
        if (a[i] == lo and b[i] == hi) or (a[i] == hi and b[i] == lo):
            return True
    return False


def conservative_defect(m: VectorMartingale, Q: DyadicCube, gamma: Polygonal, k: int) -> float:
    """``|int_gamma S_{n+k} - int_gamma S_n|`` with ``n`` the level of ``Q``."""
    n = Q.level
    if k < 0 or n + k > m.depth:
        raise ValueError(f"need 0 <= k and level + k <= depth {m.depth}")
    v = gamma.vertices
    o, s = Q.origin, Q.side
    if np.any(v < o) or np.any(v > o + s):
        raise ValueError("polygonal leaves the closed cube")
    if not _spans_parallel_faces(Q, gamma):
        raise ValueError("polygonal must run between two parallel faces of the cube")
    if k == 0:
        return 0.0
    return abs(line_integral(m, n + k, gamma, within=Q) - line_integral(m, n, gamma, within=Q))


def random_admissible_polygonal(
    Q: DyadicCube, rng: np.random.Generator, segments: int = 4, axis_bias: float = 0.6, grid: int = 12
) -> Polygonal:
    """Random polygonal from one face of ``Q`` to the opposite face.

    Vertices lie on the grid of spacing ``l(Q) 2^-grid``; with probability
    ``axis_bias`` a step moves along a single coordinate axis.
    """
    d = Q.dim
    o, s = Q.origin, Q.side
    q = s * 2.0**-grid
    cells = 2**grid
    axis = int(rng.integers(d))
    flip = bool(rng.integers(2))
    cuts = np.sort(rng.integers(1, cells, size=segments - 1))
    along = np.concatenate([[0], cuts, [cells]])
    if flip:
        along = cells - along
    pts = [o + rng.integers(0, cells + 1, size=d) * q]
    pts[0][axis] = o[axis] + along[0] * q
    for j in range(1, segments + 1):
        prev = pts[-1].copy()
        nxt = prev.copy()
        nxt[axis] = o[axis] + along[j] * q
        if rng.random() >= axis_bias:
            for i in range(d):
                if i != axis:
                    nxt[i] = o[i] + int(rng.integers(0, cells + 1)) * q
        if np.array_equal(nxt, prev):
            continue
        pts.append(nxt)
    return Polygonal(np.array(pts))


@dataclass
class DefectRow:
    cube: DyadicCube
    k: int
    defect: float

    @property
    def normalized(self) -> float:
        return self.defect / self.cube.side


def defect_audit(
    m: VectorMartingale,
    levels: Sequence[int],
    polygonals: int = 100,
    ks: Sequence[int] = (1, 2, 3, 4),
    seed: int = 0,
) -> tuple[list[DefectRow], dict[int, float]]:
    """Conservative defects over random cubes and polygonals; returns rows and per-level sup of defect/l."""
    rng = np.random.default_rng(seed)
    rows: list[DefectRow] = []
    sup: dict[int, float] = {}
    for n in levels:
        best = 0.0
        for _ in range(polygonals):
            Q = DyadicCube(n, tuple(int(c) for c in rng.integers(0, 2**n, size=m.dim)))
            gamma = random_admissible_polygonal(Q, rng)
            for k in ks:
                if n + k > m.depth:
                    continue
                r = DefectRow(Q, k, conservative_defect(m, Q, gamma, k))
                rows.append(r)
                best = max(best, r.normalized)
        sup[n] = best
    return rows, sup


# ---------------------------------------------------------------------------
# Boundedness set


def boundedness_mask(m: VectorMartingale, threshold: float) -> np.ndarray:
    """Boolean array over the deepest generation: all ancestors satisfy ``|S_n| <= threshold``."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    mask = np.linalg.norm(m.values[0], axis=-1) <= threshold
    for n in range(1, m.depth + 1):
        for ax in range(m.dim):
            mask = np.repeat(mask, 2, axis=ax)
        mask = mask & (np.linalg.norm(m.values[n], axis=-1) <= threshold)
    return mask


def boundedness_set(m: VectorMartingale, threshold: float) -> list[DyadicCube]:
    """Deepest-generation cubes all of whose ancestors have ``|S_n| <= threshold``."""
    idx = np.argwhere(boundedness_mask(m, threshold))
    return [DyadicCube(m.depth, tuple(int(c) for c in row)) for row in idx]
