"""Scalar fields with certified evaluation error, and Zygmund-class estimators.

Every field maps an ``(m, d)`` array of points to ``(values, error_bounds)``.
Weierstrass sums carry the closed-form geometric tail plus a floating-point
rounding allowance, so ``|value - true value| <= error_bound``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dyadic import Box

U = 2.0**-53  # unit roundoff of float64
TWO_PI = 2.0 * math.pi


def as_points(points, dim: int) -> np.ndarray:
    """Coerce input to a float64 ``(m, dim)`` array."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if dim == 1 else arr.reshape(1, -1)
    if arr.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# Weierstrass series


@dataclass(frozen=True)
class WeierstrassParams:
    """Parameters of ``sum_n b^(-n alpha) cos(2 pi b^n x)``.

    Either ``terms`` (the last summed index N) or ``tol`` (target tail bound)
    fixes the truncation; ``terms`` wins when both are given.
    """

    b: float = 2.0
    alpha: float = 1.0
    terms: int | None = None
    tol: float = 1e-12

    def __post_init__(self):
        if not self.b > 1:
            raise ValueError(f"Weierstrass base must exceed 1, got b={self.b}")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.terms is not None and self.terms < 0:
            raise ValueError("term count must be nonnegative")
        if self.terms is None and not self.tol > 0:
            raise ValueError("tail tolerance must be positive")

    def tail(self, N: int) -> float:
        """Certified bound for ``sum_{n > N} b^(-n alpha)``."""
        q = self.b ** (-self.alpha)
        return q ** (N + 1) / (1.0 - q)

    @property
    def last_index(self) -> int:
        if self.terms is not None:
            return self.terms
        N = 0
        while self.tail(N) > self.tol:
            N += 1
        return N

    @property
    def integer_base(self) -> bool:
        return float(self.b).is_integer()

    def to_json(self) -> dict:
        out = {"b": self.b, "alpha": self.alpha}
        if self.terms is not None:
            out["terms"] = self.terms
        else:
            out["tol"] = self.tol
        return out


def _lacunary_sum(p: WeierstrassParams, x: np.ndarray, primitive: bool):
    """Sum cos (or the sine primitive) terms with a running phase-error bound."""
    x = np.asarray(x, dtype=float)
    N = p.last_index
    b, a = float(p.b), float(p.alpha)
    total = np.zeros_like(x)
    weight_sum = 0.0
    rounding = np.zeros_like(x)
    if p.integer_base:
        t = np.mod(x, 1.0)
        # reduction is exact on [0, 1); otherwise allow one rounding of size <= U
        e = np.where(t == x, 0.0, U)
        bi = int(b)
        for n in range(N + 1):
            amp = b ** (-n * a)
            if primitive:
                amp = amp / (TWO_PI * b**n)
                total += amp * np.sin(TWO_PI * t)
            else:
                total += amp * np.cos(TWO_PI * t)
            rounding += amp * (TWO_PI * e + 10 * U)
            weight_sum += amp
            t = np.mod(bi * t, 1.0)
            # doubling is exact; larger integer bases round once per step
            e = bi * e + (0.0 if bi == 2 else bi * U)
    else:
        ax = np.abs(x)
        for n in range(N + 1):
            bn = b**n
            amp = b ** (-n * a)
            t = np.mod(bn * x, 1.0)
            e = (n + 3) * U * bn * ax + U
            if primitive:
                amp = amp / (TWO_PI * bn)
                total += amp * np.sin(TWO_PI * t)
            else:
                total += amp * np.cos(TWO_PI * t)
            rounding += amp * (TWO_PI * e + 10 * U)
            weight_sum += amp
    rounding += 2 * (N + 1) * U * weight_sum
    if primitive:
        q = b ** (-(a + 1.0))
        tail = q ** (N + 1) / ((1.0 - q) * TWO_PI)
    else:
        tail = p.tail(N)
    return total, tail + rounding


def weierstrass_eval(p: WeierstrassParams, x):
    """Value and certified error of the truncated Weierstrass series at ``x``."""
    val, err = _lacunary_sum(p, np.asarray(x, dtype=float), primitive=False)
    if np.ndim(x) == 0:
        return float(val), float(err)
    return val, err


def weierstrass_primitive(p: WeierstrassParams, x):
    """An antiderivative ``sum b^(-n alpha) sin(2 pi b^n x) / (2 pi b^n)``."""
    val, err = _lacunary_sum(p, np.asarray(x, dtype=float), primitive=True)
    if np.ndim(x) == 0:
        return float(val), float(err)
    return val, err


# ---------------------------------------------------------------------------
# One-dimensional components of separable fields


class Component:
    """A function of one real variable with a known antiderivative."""

    def value(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def primitive(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def derivative(self, t: np.ndarray) -> np.ndarray | None:
        return None

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class WeierstrassComponent(Component):
    params: WeierstrassParams

    def value(self, t):
        return _lacunary_sum(self.params, t, primitive=False)

    def primitive(self, t):
        return _lacunary_sum(self.params, t, primitive=True)

    def to_json(self):
        return {"kind": "weierstrass", **self.params.to_json()}


@dataclass(frozen=True)
class PolynomialComponent(Component):
    """``sum_k coeffs[k] t^k``."""

    coeffs: tuple[float, ...]

    def _horner(self, coeffs, t):
        acc = np.zeros_like(t)
        mag = np.zeros_like(t)
        at = np.abs(t)
        for c in reversed(coeffs):
            acc = acc * t + c
            mag = mag * at + abs(c)
        err = 2 * (len(coeffs) + 1) * U * mag
        return acc, err

    def value(self, t):
        return self._horner(self.coeffs, t)

    def primitive(self, t):
        coeffs = (0.0,) + tuple(c / (k + 1) for k, c in enumerate(self.coeffs))
        return self._horner(coeffs, t)

    def derivative(self, t):
        coeffs = tuple(k * c for k, c in enumerate(self.coeffs))[1:] or (0.0,)
        return self._horner(coeffs, t)[0]

    def second_derivative(self, t):
        coeffs = tuple(k * (k - 1) * c for k, c in enumerate(self.coeffs))[2:] or (0.0,)
        return self._horner(coeffs, t)[0]

    def to_json(self):
        return {"kind": "polynomial", "coeffs": list(self.coeffs)}


# ---------------------------------------------------------------------------
# Fields


class ScalarField:
    """Base class: subclasses implement ``evaluate``."""

    dim: int = 1
    seminorm_hint: float | None = None

    def evaluate(self, points) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def __call__(self, x) -> tuple[float, float]:
        v, e = self.evaluate(as_points(x, self.dim))
        return float(v[0]), float(e[0])

    @property
    def has_face_integral(self) -> bool:
        return False

    def face_integral(self, axis: int, coord: np.ndarray, lo: np.ndarray, side: float):
        """Integral over ``{x_axis = coord} x prod_{j != axis} [lo_j, lo_j + side]``."""
        raise NotImplementedError

    def gradient(self, points) -> np.ndarray | None:
        """Exact gradient when the field is smooth and knows it; otherwise ``None``."""
        return None

    def to_json(self) -> dict:
        raise NotImplementedError(f"{type(self).__name__} is not serializable")

    def __add__(self, other: ScalarField) -> ScalarField:
        if not isinstance(other, ScalarField):
            return NotImplemented
        if other.dim != self.dim:
            raise ValueError("cannot add fields of different dimension")
        if isinstance(self, SeparableField) and isinstance(other, SeparableField):
            return SeparableField(
                tuple(a + b for a, b in zip(self.terms, other.terms)),
                self.constant + other.constant,
            )
        return SumField(((1.0, self), (1.0, other)))

    def __mul__(self, scalar: float) -> ScalarField:
        scalar = float(scalar)
        if isinstance(self, SeparableField):
            return SeparableField(
                tuple(tuple((w * scalar, c) for w, c in axis) for axis in self.terms),
                self.constant * scalar,
            )
        return SumField(((scalar, self),))

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)


@dataclass(frozen=True, eq=False)
class SeparableField(ScalarField):
    """``F(x) = constant + sum_i sum_(w, g) w * g(x_i)``.

    ``terms[i]`` is a tuple of ``(weight, Component)`` pairs acting on coordinate ``i``.
    Face integrals have closed forms through the component antiderivatives.
    """

    terms: tuple[tuple[tuple[float, Component], ...], ...]
    constant: float = 0.0

    @property
    def dim(self) -> int:  # type: ignore[override]
        return len(self.terms)

    def _axis(self, i: int, t: np.ndarray, primitive: bool = False):
        val = np.zeros_like(t)
        err = np.zeros_like(t)
        for w, comp in self.terms[i]:
            v, e = comp.primitive(t) if primitive else comp.value(t)
            val += w * v
            err += abs(w) * e + 2 * U * np.abs(w * v)
        return val, err

    def evaluate(self, points):
        pts = as_points(points, self.dim)
        val = np.full(pts.shape[0], self.constant)
        err = np.full(pts.shape[0], 0.0)
        for i in range(self.dim):
            v, e = self._axis(i, pts[:, i])
            val += v
            err += e
        err += 2 * (self.dim + 1) * U * (np.abs(val) + abs(self.constant))
        return val, err

    @property
    def has_face_integral(self) -> bool:
        return True

    def face_integral(self, axis, coord, lo, side):
        coord = np.asarray(coord, dtype=float)
        lo = np.atleast_2d(np.asarray(lo, dtype=float))
        d = self.dim
        s = float(side)
        area = s ** (d - 1)
        v, e = self._axis(axis, coord)
        val = area * (v + self.constant)
        err = area * e
        for j in range(d):
            if j == axis:
                continue
            p_hi, e_hi = self._axis(j, lo[:, j] + s, primitive=True)
            p_lo, e_lo = self._axis(j, lo[:, j], primitive=True)
            diff = p_hi - p_lo
            val = val + s ** (d - 2) * diff
            err = err + s ** (d - 2) * (e_hi + e_lo + 2 * U * (np.abs(p_hi) + np.abs(p_lo)))
        err = err + 2 * (d + 1) * U * np.abs(val)
        return val, err

    def gradient(self, points):
        pts = as_points(points, self.dim)
        out = np.zeros_like(pts)
        for i in range(self.dim):
            for w, comp in self.terms[i]:
                g = comp.derivative(pts[:, i])
                if g is None:
                    return None
                out[:, i] += w * g
        return out

    def to_json(self):
        return {
            "kind": "separable",
            "constant": self.constant,
            "terms": [[{"weight": w, **c.to_json()} for w, c in axis] for axis in self.terms],
        }


@dataclass(frozen=True, eq=False)
class SumField(ScalarField):
    """Weighted sum of arbitrary fields of the same dimension."""

    parts: tuple[tuple[float, ScalarField], ...]

    @property
    def dim(self) -> int:  # type: ignore[override]
        return self.parts[0][1].dim

    def evaluate(self, points):
        pts = as_points(points, self.dim)
        val = np.zeros(pts.shape[0])
        err = np.zeros(pts.shape[0])
        for w, f in self.parts:
            v, e = f.evaluate(pts)
            val += w * v
            err += abs(w) * e + 2 * U * np.abs(w * v)
        return val, err + 2 * len(self.parts) * U * np.abs(val)

    @property
    def has_face_integral(self) -> bool:
        return all(f.has_face_integral for _, f in self.parts)

    def face_integral(self, axis, coord, lo, side):
        val, err = 0.0, 0.0
        for w, f in self.parts:
            v, e = f.face_integral(axis, coord, lo, side)
            val = val + w * v
            err = err + abs(w) * e + 2 * U * np.abs(w * v)
        return val, err

    def gradient(self, points):
        out = None
        for w, f in self.parts:
            g = f.gradient(points)
            if g is None:
                return None
            out = w * g if out is None else out + w * g
        return out


@dataclass(frozen=True, eq=False)
class FunctionField(ScalarField):
    """Wrap a vectorized callable ``fn((m, d) array) -> (m,) array``.

    ``error`` is an absolute per-evaluation bound supplied by the caller.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    dim_: int = 1
    error: float = 0.0
    grad: Callable[[np.ndarray], np.ndarray] | None = None

    @property
    def dim(self) -> int:  # type: ignore[override]
        return self.dim_

    def evaluate(self, points):
        pts = as_points(points, self.dim)
        val = np.asarray(self.fn(pts), dtype=float).reshape(-1)
        return val, np.full(val.shape, float(self.error))

    def gradient(self, points):
        if self.grad is None:
            return None
        return np.asarray(self.grad(as_points(points, self.dim)), dtype=float)


# ---------------------------------------------------------------------------
# Constructors


def weierstrass_field(p: WeierstrassParams) -> SeparableField:
    return SeparableField(((((1.0, WeierstrassComponent(p)),)),))


def tensor_sum_field(p: WeierstrassParams, d: int) -> SeparableField:
    """``F(x) = sum_i f_b(x_i)`` on ``R^d``."""
    if d < 1:
        raise ValueError("dimension must be at least 1")
    comp = WeierstrassComponent(p)
    return SeparableField(tuple(((1.0, comp),) for _ in range(d)))


def linear_field(c: Sequence[float], c0: float = 0.0) -> SeparableField:
    return SeparableField(tuple(((1.0, PolynomialComponent((0.0, float(ci)))),) for ci in c), float(c0))


def quadratic_field(q: Sequence[float]) -> SeparableField:
    """``F(x) = sum_i q_i x_i^2``."""
    return SeparableField(tuple(((1.0, PolynomialComponent((0.0, 0.0, float(qi)))),) for qi in q))


def _component_from_json(obj: dict) -> Component:
    kind = obj.get("kind")
    if kind == "weierstrass":
        return WeierstrassComponent(_weierstrass_params(obj))
    if kind == "polynomial":
        return PolynomialComponent(tuple(float(c) for c in obj["coeffs"]))
    raise ValueError(f"unknown component kind {kind!r}")


def _weierstrass_params(obj: dict) -> WeierstrassParams:
    return WeierstrassParams(
        b=float(obj.get("b", 2.0)),
        alpha=float(obj.get("alpha", 1.0)),
        terms=None if obj.get("terms") is None else int(obj["terms"]),
        tol=float(obj.get("tol", 1e-12)),
    )


def field_from_config(obj: dict) -> ScalarField:
    """Build a field from ``{"kind": ..., params...}``.

    Kinds: ``weierstrass``, ``tensor_sum``, ``linear``, ``quadratic``,
    ``counterexample``, ``separable`` and ``sum`` (weighted list of fields).
    """
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ValueError("field spec must be an object with a 'kind' entry")
    kind = obj["kind"]
    if kind == "weierstrass":
        return weierstrass_field(_weierstrass_params(obj))
    if kind == "tensor_sum":
        return tensor_sum_field(_weierstrass_params(obj), int(obj.get("dim", 2)))
    if kind == "linear":
        return linear_field([float(c) for c in obj["c"]], float(obj.get("c0", 0.0)))
    if kind == "quadratic":
        return quadratic_field([float(q) for q in obj["q"]])
    if kind == "separable":
        terms = tuple(
            tuple((float(t.get("weight", 1.0)), _component_from_json(t)) for t in axis) for axis in obj["terms"]
        )
        return SeparableField(terms, float(obj.get("constant", 0.0)))
    if kind == "sum":
        parts = [field_from_config(p["field"]) * float(p.get("weight", 1.0)) for p in obj["parts"]]
        out = parts[0]
        for p in parts[1:]:
            out = out + p
        return out
    if kind == "counterexample":
        from .counterexample import counterexample_from_config

        return counterexample_from_config(obj)
    raise ValueError(f"unknown field kind {kind!r}")


# ---------------------------------------------------------------------------
# Second differences and Zygmund estimators


def second_difference(f: ScalarField, x, h):
    """``f(x+h) + f(x-h) - 2 f(x)`` with the summed evaluation bounds."""
    xs = as_points(x, f.dim)
    hs = as_points(h, f.dim)
    if hs.shape[0] == 1 and xs.shape[0] > 1:
        hs = np.broadcast_to(hs, xs.shape)
    if np.any(np.all(hs == 0, axis=1)):
        raise ValueError("second difference needs a nonzero increment h")
    m = xs.shape[0]
    v, e = f.evaluate(np.concatenate([xs + hs, xs - hs, xs]))
    val = v[:m] + v[m : 2 * m] - 2 * v[2 * m :]
    err = e[:m] + e[m : 2 * m] + 2 * e[2 * m :] + 4 * U * (np.abs(v[:m]) + np.abs(v[m : 2 * m]) + 2 * np.abs(v[2 * m :]))
    if np.ndim(x) <= (0 if f.dim == 1 else 1) and m == 1:
        return float(val[0]), float(err[0])
    return val, err


@dataclass(frozen=True)
class SampleSpec:
    """Sampling plan: ``count`` base points in ``region``; ``|h| = 2^-k`` with k in ``levels``."""

    count: int = 10_000
    levels: tuple[int, int] = (1, 20)
    region: Box | None = None
    seed: int = 0

    def __post_init__(self):
        if self.count <= 0:
            raise ValueError("sample count must be positive")
        if self.levels[0] > self.levels[1]:
            raise ValueError("level range must be increasing (coarse to fine)")

    def box(self, dim: int) -> Box:
        return self.region if self.region is not None else Box((0.0,) * dim, (1.0,) * dim)


@dataclass(frozen=True)
class SeminormEstimate:
    value: float
    certified_lower: float
    count: int
    argmax_x: tuple[float, ...]
    argmax_h: tuple[float, ...]

    def __float__(self) -> float:
        return self.value


def _grid_exponent(box: Box, finest: int) -> int:
    extent = max(max(abs(v) for v in box.lo), max(abs(v) for v in box.hi)) + 2.0
    return min(finest + 30, 52 - math.ceil(math.log2(extent)))


def _zygmund_ratios(f: ScalarField, x: np.ndarray, levels: np.ndarray, rng, box: Box):
    """Sampled |Delta_2 f(x, h)| / |h| with |h| ~ 2^-level, x and h on a common dyadic grid."""
    d = f.dim
    G = _grid_exponent(box, int(levels.max()))
    q = 2.0**-G
    x = np.floor(x / q) * q
    if d == 1:
        dirs = np.where(rng.random((len(x), 1)) < 0.5, -1.0, 1.0)
    else:
        dirs = rng.normal(size=(len(x), d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    h = np.round(dirs * np.ldexp(1.0, -levels)[:, None] / q) * q
    zero = np.all(h == 0, axis=1)
    h[zero, 0] = np.ldexp(1.0, -levels[zero])
    norm = np.linalg.norm(h, axis=1)
    val, err = second_difference(f, x, h)
    val = np.atleast_1d(val)
    err = np.atleast_1d(err)
    return np.abs(val) / norm, err / norm, x, h


def seminorm_estimate(f: ScalarField, spec: SampleSpec) -> SeminormEstimate:
    """Maximum sampled ``|Delta_2 f(x, h)| / |h|``: a lower bound for the Zygmund seminorm."""
    rng = np.random.default_rng(spec.seed)
    box = spec.box(f.dim)
    x = box.sample(rng, spec.count)
    levels = rng.integers(spec.levels[0], spec.levels[1] + 1, size=spec.count)
    ratio, slack, xq, h = _zygmund_ratios(f, x, levels, rng, box)
    i = int(np.argmax(ratio))
    lower = float(np.max(np.maximum(ratio - slack, 0.0)))
    return SeminormEstimate(float(ratio[i]), lower, spec.count, tuple(xq[i]), tuple(h[i]))


def small_zygmund_profile(
    f: ScalarField,
    scales: Sequence[int],
    count: int = 2_000,
    region: Box | None = None,
    seed: int = 0,
) -> list[tuple[float, float]]:
    """Per-scale maximum of the sampled second-difference ratio.

    ``scales`` lists dyadic levels k (so ``|h| = 2^-k``), coarse to fine.
    """
    scales = [int(k) for k in scales]
    if any(b <= a for a, b in zip(scales, scales[1:])):
        raise ValueError("scales must be listed coarse to fine")
    box = region if region is not None else Box((0.0,) * f.dim, (1.0,) * f.dim)
    rng = np.random.default_rng(seed)
    out = []
    for k in scales:
        x = box.sample(rng, count)
        ratio, _, _, _ = _zygmund_ratios(f, x, np.full(count, k), rng, box)
        out.append((math.ldexp(1.0, -k), float(ratio.max())))
    return out
