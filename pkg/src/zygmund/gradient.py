"""Discrete gradients on dyadic cubes and the estimates built from them."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dyadic import Box, DyadicCube, locate
from .fields import ScalarField, SampleSpec, as_points

MAX_TRAJECTORY_LEVEL = 40


class AdmissibilityError(ValueError):
    """A sampled (Q, a, b) triple violates the distance preconditions."""


@dataclass(frozen=True)
class DiscreteGradient:
    cube: DyadicCube
    vector: np.ndarray
    error_bound: float

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))

    def to_json(self) -> dict:
        return {"cube": self.cube.to_json(), "vector": [float(v) for v in self.vector], "error_bound": self.error_bound}


def discrete_gradients(f: ScalarField, level: int, coords) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences at the origins of many same-level cubes.

    ``coords`` is an integer ``(m, d)`` array.  Returns ``(V, err)`` with
    ``V`` of shape ``(m, d)``.
    """
    coords = np.asarray(coords)
    if coords.ndim == 1:
        coords = coords.reshape(1, -1)
    m, d = coords.shape
    side = math.ldexp(1.0, -level)
    origins = np.ldexp(coords.astype(float), -level)
    pts = np.empty(((d + 1) * m, d))
    pts[:m] = origins
    for j in range(d):
        shifted = origins.copy()
        shifted[:, j] += side
        pts[(j + 1) * m : (j + 2) * m] = shifted
    vals, errs = f.evaluate(pts)
    base, ebase = vals[:m], errs[:m]
    V = np.empty((m, d))
    E = np.zeros(m)
    for j in range(d):
        V[:, j] = (vals[(j + 1) * m : (j + 2) * m] - base) / side
        E += errs[(j + 1) * m : (j + 2) * m] + ebase
    return V, E / side


def discrete_gradient(f: ScalarField, Q: DyadicCube) -> DiscreteGradient:
    """``V(Q)_j = (f(x + l e_j) - f(x)) / l`` at the origin ``x`` of ``Q``."""
    if Q.dim != f.dim:
        raise ValueError(f"cube dimension {Q.dim} does not match field dimension {f.dim}")
    V, E = discrete_gradients(f, Q.level, np.array([Q.coords], dtype=np.int64)) if Q.level <= 62 else _big(f, Q)
    return DiscreteGradient(Q, V[0], float(E[0]))


def _big(f: ScalarField, Q: DyadicCube):
    origin = Q.origin
    side = Q.side
    pts = [origin] + [origin + side * np.eye(Q.dim)[j] for j in range(Q.dim)]
    vals, errs = f.evaluate(np.array(pts))
    V = (vals[1:] - vals[0]) / side
    return V.reshape(1, -1), np.array([(errs[1:].sum() + Q.dim * errs[0]) / side])


def _random_cubes(rng, box: Box, level: int, count: int, dim: int) -> np.ndarray:
    x = box.sample(rng, count)
    return np.floor(np.ldexp(x, level)).astype(np.int64)


def gradient_modulus(f: ScalarField, delta: float, spec: SampleSpec) -> float:
    """Sampled ``max |V(child) - V(parent)|`` over parents of side ``<= delta``.

    Parent levels are drawn from ``spec.levels`` clipped below by ``-log2(delta)``.
    The result is a lower bound for the modulus ``w(delta)``.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    base = max(0, math.ceil(-math.log2(delta) - 1e-12))
    lo = max(base, spec.levels[0])
    hi = max(lo, spec.levels[1])
    rng = np.random.default_rng(spec.seed)
    box = spec.box(f.dim)
    d = f.dim
    best = 0.0
    levels = rng.integers(lo, hi + 1, size=spec.count)
    for level in np.unique(levels):
        cnt = int(np.sum(levels == level))
        parents = _random_cubes(rng, box, int(level), cnt, d)
        choice = rng.integers(0, 2, size=(cnt, d))
        children = 2 * parents + choice
        Vp, _ = discrete_gradients(f, int(level), parents)
        Vc, _ = discrete_gradients(f, int(level) + 1, children)
        best = max(best, float(np.max(np.linalg.norm(Vc - Vp, axis=1))))
    return best


def gradient_modulus_exhaustive(f: ScalarField, Q: DyadicCube, depth: int) -> float:
    """Exact ``max |V(child) - V(parent)|`` over all parents inside ``Q`` down to ``depth``."""
    from .dyadic import subcube_coords

    best = 0.0
    for level in range(Q.level, depth):
        parents = subcube_coords(Q, level)
        Vp, _ = discrete_gradients(f, level, parents)
        for eps in np.ndindex(*(2,) * Q.dim):
            Vc, _ = discrete_gradients(f, level + 1, 2 * parents + np.array(eps))
            best = max(best, float(np.max(np.linalg.norm(Vc - Vp, axis=1))))
    return best


def lemma2_residual(f: ScalarField, Q: DyadicCube, a, b, C: float = 4.0) -> float:
    """``|f(b) - f(a) - <V(Q), b - a>|`` for an admissible triple.

    Admissible means ``dist(a, Q) <= C l(Q)`` and ``|b - a| <= C l(Q)``.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    _check_admissible(Q, a[None, :], b[None, :], C)
    V = discrete_gradient(f, Q).vector
    vals, _ = f.evaluate(np.stack([a, b]))
    return float(abs(vals[1] - vals[0] - V @ (b - a)))


def _dist_to_cubes(origins: np.ndarray, side, pts: np.ndarray) -> np.ndarray:
    gap = np.maximum(np.maximum(origins - pts, pts - (origins + side)), 0.0)
    return np.linalg.norm(gap, axis=1)


def _check_admissible(Q: DyadicCube, a: np.ndarray, b: np.ndarray, C: float):
    side = Q.side
    dist = _dist_to_cubes(Q.origin[None, :], side, a)
    step = np.linalg.norm(b - a, axis=1)
    bad = (dist > C * side * (1 + 1e-12)) | (step > C * side * (1 + 1e-12))
    if np.any(bad):
        i = int(np.argmax(bad))
        raise AdmissibilityError(
            f"triple not admissible for C={C}: dist(a,Q)={dist[i]:.3g}, |b-a|={step[i]:.3g}, l(Q)={side:.3g}"
        )


@dataclass(frozen=True)
class RemainderBatch:
    """Residuals ``|f(b) - f(a) - <V(Q), b-a>|`` for a batch of random admissible triples."""

    levels: np.ndarray
    residuals: np.ndarray
    sides: np.ndarray

    @property
    def normalized(self) -> np.ndarray:
        return self.residuals / self.sides

    @property
    def max_normalized(self) -> float:
        return float(self.normalized.max())


def _random_sphere(rng, count: int, dim: int, radius: np.ndarray) -> np.ndarray:
    v = rng.normal(size=(count, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius[:, None]


def remainder_batch(
    f: ScalarField,
    count: int,
    levels: tuple[int, int] = (0, 12),
    C: float = 4.0,
    seed: int = 0,
    region: Box | None = None,
) -> RemainderBatch:
    """Sample admissible triples for the first-order remainder.

    ``Q`` is a random cube with level in ``levels``; ``a`` sits at distance
    exactly ``C l(Q)`` from a uniform point of ``Q`` and ``b`` at distance
    exactly ``C l(Q)`` from ``a``.  Sampling on the boundary of the admissible
    region aims the maximum at the supremum the remainder bound controls.
    """
    d = f.dim
    rng = np.random.default_rng(seed)
    box = region if region is not None else Box((0.0,) * d, (1.0,) * d)
    lv = rng.integers(levels[0], levels[1] + 1, size=count)
    sides = np.ldexp(1.0, -lv)
    x = box.sample(rng, count)
    coords = np.floor(np.ldexp(x, lv[:, None])).astype(np.int64)
    origins = np.ldexp(coords.astype(float), -lv[:, None])
    inside = origins + rng.random((count, d)) * sides[:, None]
    a = inside + _random_sphere(rng, count, d, C * sides)
    b = a + _random_sphere(rng, count, d, C * sides)
    dist = _dist_to_cubes(origins, sides[:, None], a)
    if np.any(dist > C * sides * (1 + 1e-12)) or np.any(np.linalg.norm(b - a, axis=1) > C * sides * (1 + 1e-12)):
        raise AdmissibilityError("sampler produced an inadmissible triple")
    V = np.empty((count, d))
    for level in np.unique(lv):
        sel = lv == level
        V[sel], _ = discrete_gradients(f, int(level), coords[sel])
    fa, _ = f.evaluate(a)
    fb, _ = f.evaluate(b)
    res = np.abs(fb - fa - np.sum(V * (b - a), axis=1))
    return RemainderBatch(lv, res, sides)


@dataclass
class GradientTrajectory:
    """``V(Q_n(x))`` for ``n = 0..n_max`` along the nested cubes containing ``x``."""

    point: tuple[float, ...]
    cubes: list[DyadicCube]
    vectors: np.ndarray
    errors: np.ndarray

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.vectors, axis=1)

    @property
    def sup_norm(self) -> float:
        return float(self.norms.max())

    @property
    def argmax_level(self) -> int:
        return int(np.argmax(self.norms))

    @property
    def last_increment(self) -> float:
        if len(self.vectors) < 2:
            return 0.0
        return float(np.linalg.norm(self.vectors[-1] - self.vectors[-2]))

    def max_up_to(self, n: int) -> float:
        return float(self.norms[: n + 1].max())

    @property
    def values(self) -> list[DiscreteGradient]:
        return [DiscreteGradient(Q, v, float(e)) for Q, v, e in zip(self.cubes, self.vectors, self.errors)]


def gradient_trajectory(f: ScalarField, x, n_max: int) -> GradientTrajectory:
    if n_max < 0:
        raise ValueError("n_max must be nonnegative")
    if n_max > MAX_TRAJECTORY_LEVEL:
        raise ValueError(f"trajectories are capped at level {MAX_TRAJECTORY_LEVEL}")
    xs = as_points(x, f.dim)[0]
    V, E = trajectories(f, xs[None, :], n_max)
    cubes = [locate(xs, n) for n in range(n_max + 1)]
    return GradientTrajectory(tuple(float(v) for v in xs), cubes, V[0], E[0])


def trajectories(f: ScalarField, points, n_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized trajectories: ``(m, n_max+1, d)`` gradients and ``(m, n_max+1)`` error bounds."""
    if n_max > MAX_TRAJECTORY_LEVEL:
        raise ValueError(f"trajectories are capped at level {MAX_TRAJECTORY_LEVEL}")
    pts = as_points(points, f.dim)
    m, d = pts.shape
    V = np.empty((m, n_max + 1, d))
    E = np.empty((m, n_max + 1))
    for n in range(n_max + 1):
        coords = np.floor(np.ldexp(pts, n)).astype(np.int64)
        V[:, n], E[:, n] = discrete_gradients(f, n, coords)
    return V, E
