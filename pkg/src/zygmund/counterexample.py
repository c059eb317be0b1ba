"""A planar small Zygmund function with large divided differences off a thin set.

``f = g_1 + g_2 + ...`` where each ``g_{k+1}`` oscillates, inside every grid
cell of side ``2^-N_k``, along a direction orthogonal to ``grad f_k`` at the
cell center.  The oscillation is a smoothed sawtooth pasted together with
plateau bumps, so the new gradient is nearly orthogonal to the old one and
``|grad f_k|^2`` grows by about ``eps_k^2`` outside a union of thin strips
and cell frames.

The quantifiers shrink doubly exponentially (strip widths reach ``1e-34`` by
the third stage), so points are handled as exact dyadic rationals: integer
pairs ``X`` with ``x = X / 2^P``.  Phases are reduced with integer arithmetic
and only the final offsets are converted to floats.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .dyadic import Box, DyadicCube
from .fields import U, ScalarField, as_points

BUMP_C = 1.5 * math.sqrt(2.0)  # sup alpha*|grad w| for the smoothstep product
BUMP_H = 8.25  # sup alpha^2*||hess w||, row-sum bound 6 + 1.5*1.5
NORMAL_BITS = 62
DIM = 2


class ScheduleError(ValueError):
    """The requested quantifier schedule cannot satisfy its inequalities."""


# ---------------------------------------------------------------------------
# Quantifier schedule


@dataclass(frozen=True)
class StageRecord:
    k: int
    eps: float
    eta: float
    N: int
    alpha: float
    sigma: float
    n: int
    beta: float
    M: float  # certified bound for sup |grad f_k|
    lipschitz: float  # certified Lipschitz bound for grad f_k

    def to_json(self) -> dict:
        return {
            "k": self.k, "eps": self.eps, "eta": self.eta, "N": self.N, "alpha": self.alpha,
            "sigma": self.sigma, "n": str(self.n), "beta": self.beta, "M": self.M,
            "lipschitz": self.lipschitz,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "StageRecord":
        return cls(
            int(obj["k"]), float(obj["eps"]), float(obj["eta"]), int(obj["N"]), float(obj["alpha"]),
            float(obj["sigma"]), int(obj["n"]), float(obj["beta"]), float(obj["M"]), float(obj["lipschitz"]),
        )

    @property
    def gradient_constant(self) -> float:
        """``C`` with ``sup |grad g_{k+1}| <= C eps_k``."""
        return 1.0 + self.sigma * BUMP_C / (self.alpha * self.eps)

    @property
    def hessian_bound(self) -> float:
        """Certified bound for the Hessian norm of ``g_{k+1}``."""
        return self.sigma * BUMP_H / self.alpha ** 2 + 2 * self.eps * BUMP_C / self.alpha + 2 * self.eps / self.beta


@dataclass(frozen=True)
class QuantifierSchedule:
    records: tuple[StageRecord, ...]
    fraction: float = 0.5
    n_min: int = 2

    def __len__(self):
        return len(self.records)

    def __getitem__(self, k) -> StageRecord:
        return self.records[k]

    def to_json(self) -> dict:
        return {"fraction": self.fraction, "n_min": self.n_min, "records": [r.to_json() for r in self.records]}

    @classmethod
    def from_json(cls, obj: dict) -> "QuantifierSchedule":
        return cls(tuple(StageRecord.from_json(r) for r in obj["records"]), float(obj["fraction"]), int(obj["n_min"]))


def default_epsilons(stages: int) -> list[float]:
    return [(k + 2) ** -0.5 for k in range(stages)]


def schedule_build(epsilons: Sequence[float], fraction: float = 0.5, n_min: int = 2) -> QuantifierSchedule:
    """Choose every quantifier greedily as ``fraction`` of its upper bound.

    ``N_k`` is the smallest level (at least ``n_min`` and above ``N_{k-1}``)
    with ``L_k * 2 * 2^-N_k < eta_k``, ``L_k`` being a certified Lipschitz
    bound for ``grad f_k``.  The factor 2 makes the continuity estimate valid
    at distance ``2^{1-N_k}``, which is what second differences need.
    """
    eps = [float(e) for e in epsilons]
    if not eps:
        raise ScheduleError("at least one stage is required")
    if not 0 < fraction <= 0.5:
        raise ScheduleError("fraction must lie in (0, 1/2] for the tail bound on sigma")
    if any(not 0 < e <= 1 for e in eps):
        raise ScheduleError("every eps_k must lie in (0, 1]")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ScheduleError("eps_k must be strictly decreasing")
    records = []
    M = L = 0.0
    prev_N = None
    prev_sigma = math.inf
    for k, e in enumerate(eps):
        eta = fraction * min(math.ldexp(1.0, -k) / M if M > 0 else math.inf, e ** 3)
        N = n_min if L == 0 else math.floor(math.log2(2 * L / eta)) + 1
        N = max(N, n_min, prev_N + 1 if prev_N is not None else n_min)
        alpha = fraction * math.ldexp(1.0, -N - 2)
        sigma = fraction * min(e * alpha * eta / (1 + M), prev_sigma)
        n = math.floor(2 / Fraction(sigma)) + 1
        beta = fraction * min(math.ldexp(1.0, -N) / n, 1 / (2 * n))
        rec = StageRecord(k, e, eta, N, alpha, sigma, n, beta, M, L)
        records.append(rec)
        M += e + sigma * BUMP_C / alpha
        L += rec.hessian_bound
        prev_N, prev_sigma = N, sigma
    return QuantifierSchedule(tuple(records), fraction, n_min)


def audit_schedule(obj: dict) -> dict[str, bool]:
    """Recheck the six inequality families from the emitted numbers alone.

    Floats are read as the exact rationals they represent, so the strict
    inequalities are decided without rounding.
    """
    recs = obj["records"]
    F = lambda v: Fraction(float(v))  # noqa: E731
    eps = [F(r["eps"]) for r in recs]
    sq = [sum((e * e for e in eps[: i + 1]), Fraction(0)) for i in range(len(eps))]
    out = {
        "eps_squares": all(b > a for a, b in zip(sq, sq[1:])) and all(b < a for a, b in zip(eps, eps[1:])),
        "eta": True, "alpha": True, "sigma": True, "n_beta": True, "sigma_tail": True,
    }
    sig = [F(r["sigma"]) for r in recs]
    for i, r in enumerate(recs):
        k, e, eta, N, M = int(r["k"]), eps[i], F(r["eta"]), int(r["N"]), F(r["M"])
        alpha, sigma, n, beta = F(r["alpha"]), sig[i], int(r["n"]), F(r["beta"])
        cell = Fraction(1, 1 << N)
        if not (eta > 0 and (M == 0 or eta < Fraction(1, 1 << k) / M) and eta <= e ** 3):
            out["eta"] = False
        if not 0 < alpha < cell / 4:
            out["alpha"] = False
        if not 0 < sigma < e * alpha * eta / (1 + M):
            out["sigma"] = False
        if not (n * sigma > 2 and 0 < beta * n < cell and beta * n < Fraction(1, 2)):
            out["n_beta"] = False
        if not sum(sig[i:], Fraction(0)) <= 2 * sigma:
            out["sigma_tail"] = False
    return out


# ---------------------------------------------------------------------------
# One-dimensional profiles and bumps


def psi(t, eps: float, n: int):
    """``eps * dist(t, Z/n)``."""
    if n < 1 or not eps > 0:
        raise ValueError("need n >= 1 and eps > 0")
    t = np.asarray(t, dtype=float)
    u = t * n
    return eps / n * np.abs(u - np.rint(u))


@dataclass(frozen=True)
class Profile:
    """Smoothed sawtooth of period ``1/n``: the corners of ``psi`` are replaced
    by parabolas on windows of width ``beta`` centered at ``i/(2n)``."""

    eps: float
    sigma: float
    n: int
    beta: float

    @property
    def b(self) -> float:
        """Window width measured in units of ``n t``."""
        return self.beta * self.n

    def unit(self, v: float, odd: int) -> tuple[float, float]:
        """Unit profile and its derivative at offset ``v`` (units of ``n t``)
        from the nearest corner; ``odd`` marks a maximum."""
        b = self.b
        a = abs(v)
        if a >= b / 2:
            P, dP = a, math.copysign(1.0, v)
        else:
            P, dP = v * v / b + b / 4, 2 * v / b
        if odd:
            return 0.5 - P, -dP
        return P, dP

    def _parts(self, t):
        z = 2 * self.n * np.asarray(t, dtype=float)
        m = np.rint(z)
        v = (z - m) / 2
        odd = (m.astype(np.int64) & 1).astype(bool)
        b = self.b
        a = np.abs(v)
        inner = a < b / 2
        P = np.where(inner, v * v / b + b / 4, a)
        dP = np.where(inner, 2 * v / b, np.sign(v))
        P = np.where(odd, 0.5 - P, P)
        dP = np.where(odd, -dP, dP)
        return P, dP

    def __call__(self, t):
        return self.eps / self.n * self._parts(t)[0]

    def derivative(self, t):
        return self.eps * self._parts(t)[1]

    def bad_intervals(self, lo: float, hi: float) -> list[tuple[float, float]]:
        """Windows of length ``beta`` around the corners ``i/(2n)`` meeting ``[lo, hi]``."""
        i0 = math.floor((lo - self.beta) * 2 * self.n)
        i1 = math.ceil((hi + self.beta) * 2 * self.n)
        out = []
        for i in range(i0, i1 + 1):
            c = i / (2 * self.n)
            if c + self.beta / 2 > lo and c - self.beta / 2 < hi:
                out.append((c - self.beta / 2, c + self.beta / 2))
        return out


def smooth_profile(eps: float, sigma: float, n: int, beta: float) -> Profile:
    if not 0 < beta < 1 / (2 * n):
        raise ValueError(f"smoothing window beta={beta} must lie in (0, 1/(2n))")
    if eps / (2 * n) > sigma:
        raise ValueError("profile amplitude eps/(2n) exceeds sigma")
    return Profile(float(eps), float(sigma), int(n), float(beta))


def _smoothstep(r):
    r = np.clip(r, 0.0, 1.0)
    return r * r * (3 - 2 * r), 6 * r * (1 - r)


def _smoothstep1(r: float) -> tuple[float, float]:
    if r <= 0.0:
        return 0.0, 0.0
    if r >= 1.0:
        return 1.0, 0.0
    return r * r * (3 - 2 * r), 6 * r * (1 - r)


def bump(x, center, N: int, alpha: float):
    """Plateau bump of the cube of side ``2^-N`` at ``center``: ``(value, gradient)``.

    Equal to 1 on the concentric cube of half side ``2^-N/2 - alpha`` and 0
    outside the cube, built as a product of smoothsteps.
    """
    if not 0 < alpha < math.ldexp(1.0, -N - 2):
        raise ValueError("alpha must lie in (0, 2^-N-2)")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = x - np.asarray(center, dtype=float)
    r = (math.ldexp(0.5, -N) - np.abs(d)) / alpha
    h, dh = _smoothstep(r)
    val = np.prod(h, axis=1)
    grad = np.empty_like(d)
    for i in range(d.shape[1]):
        others = np.prod(np.delete(h, i, axis=1), axis=1)
        grad[:, i] = -np.sign(d[:, i]) * dh[:, i] / alpha * others
    return val, grad


def bump_constant_scan(points: int = 401) -> float:
    """Dense scan of ``alpha * |grad w|`` over the transition region."""
    r = np.linspace(0.0, 1.0, points)
    h, dh = _smoothstep(r)
    g = np.sqrt(np.add.outer(dh ** 2, np.zeros(points)) * h[None, :] ** 2 + h[:, None] ** 2 * dh[None, :] ** 2)
    return float(g.max())


# ---------------------------------------------------------------------------
# Exact evaluation


@dataclass
class StageFunction:
    """``g_{k+1}`` with its cell grid and cached per-cell normals."""

    k: int
    record: StageRecord
    profile: Profile
    cover_level: int
    normals: dict[tuple[int, int], tuple[int, int]] = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.record.N

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "record": self.record.to_json(),
            "profile": {"eps": self.profile.eps, "sigma": self.profile.sigma, "n": str(self.profile.n), "beta": self.profile.beta},
            "cover_level": self.cover_level,
            "normals": [[str(c[0]), str(c[1]), str(e[0]), str(e[1])] for c, e in sorted(self.normals.items())],
        }


@dataclass
class _Eval:
    value: float
    grad: tuple[float, float]
    in_frame: bool
    in_strip: bool


class Counterexample:
    """All stages ``g_1..g_K`` of the construction with exact point handling."""

    def __init__(self, schedule: QuantifierSchedule, precision: int | None = None):
        self.schedule = schedule
        beta_min = min(r.beta for r in schedule.records)
        top = max(r.N for r in schedule.records)
        levels = [max(r.N + 4, math.ceil(math.log2(2 * r.n)) + 5) for r in schedule.records]
        need = max(math.ceil(-math.log2(beta_min)) + 48, top + 64, max(levels) + 16)
        self.P = int(precision) if precision is not None else need
        if self.P < need:
            raise ValueError(f"precision {self.P} below the {need} bits the schedule needs")
        self.den = 1 << (self.P + NORMAL_BITS)
        self.stages = [
            StageFunction(r.k, r, smooth_profile(r.eps, r.sigma, r.n, r.beta), L)
            for r, L in zip(schedule.records, levels)
        ]

    @property
    def K(self) -> int:
        return len(self.stages)

    # -- conversions
    def exact(self, x) -> tuple[int, int]:
        return tuple(math.floor(math.ldexp(float(v), self.P)) for v in x)

    def to_float(self, X) -> np.ndarray:
        return np.array([math.ldexp(float(v), -self.P) for v in X])

    # -- geometry of stage j
    def cell(self, j: int, X) -> tuple[int, int]:
        s = self.P - self.stages[j].N
        return (X[0] >> s, X[1] >> s)

    def center(self, j: int, c) -> tuple[int, int]:
        s = self.P - self.stages[j].N
        return (((2 * c[0] + 1) << (s - 1)), ((2 * c[1] + 1) << (s - 1)))

    def normal(self, j: int, c) -> tuple[int, int]:
        st = self.stages[j]
        e = st.normals.get(c)
        if e is None:
            gx, gy = self.grad_f(j, self.center(j, c))
            norm = math.hypot(gx, gy)
            if norm < 1e-12:
                e = (1 << NORMAL_BITS, 0)
            else:
                e = (round(math.ldexp(-gy / norm, NORMAL_BITS)), round(math.ldexp(gx / norm, NORMAL_BITS)))
            st.normals[c] = e
        return e

    def _phase(self, j: int, X, c, E):
        st = self.stages[j]
        a = self.center(j, c)
        d1, d2 = X[0] - a[0], X[1] - a[1]
        Z = 2 * st.profile.n * (d1 * E[0] + d2 * E[1])
        D = self.den
        m = (2 * Z + D) // (2 * D)
        return d1, d2, Z, m, Z - m * D

    def stage_eval(self, j: int, X) -> _Eval:
        """Value, gradient and exceptional-set flags of ``g_{j+1}`` at ``X``."""
        st = self.stages[j]
        rec = st.record
        c = self.cell(j, X)
        E = self.normal(j, c)
        d1, d2, _, m, dnum = self._phase(j, X, c, E)
        half = 1 << (self.P - st.N - 1)
        r1 = math.ldexp(float(half - abs(d1)), -self.P) / rec.alpha
        r2 = math.ldexp(float(half - abs(d2)), -self.P) / rec.alpha
        h1, dh1 = _smoothstep1(r1)
        h2, dh2 = _smoothstep1(r2)
        w = h1 * h2
        gw1 = -math.copysign(1.0, d1) * dh1 * h2 / rec.alpha if d1 else 0.0
        gw2 = -math.copysign(1.0, d2) * dh2 * h1 / rec.alpha if d2 else 0.0
        v = math.ldexp(float(dnum), -(self.P + NORMAL_BITS)) / 2
        Phi, dPhi = st.profile.unit(v, m & 1)
        phi = rec.eps / st.profile.n * Phi
        dphi = rec.eps * dPhi
        e1, e2 = math.ldexp(E[0], -NORMAL_BITS), math.ldexp(E[1], -NORMAL_BITS)
        val = w * phi
        grad = (phi * gw1 + w * dphi * e1, phi * gw2 + w * dphi * e2)
        return _Eval(val, grad, r1 < 1 or r2 < 1, abs(v) < st.profile.b)

    def stage_value_exact(self, j: int, X) -> Fraction:
        """``g_{j+1}(X)`` as an exact rational (the normals are already dyadic)."""
        st = self.stages[j]
        rec = st.record
        c = self.cell(j, X)
        E = self.normal(j, c)
        d1, d2, _, m, dnum = self._phase(j, X, c, E)
        half = 1 << (self.P - st.N - 1)
        alpha = Fraction(rec.alpha) * (1 << self.P)
        w = Fraction(1)
        for di in (d1, d2):
            r = (half - abs(di)) / alpha
            if r <= 0:
                return Fraction(0)
            if r < 1:
                w *= r * r * (3 - 2 * r)
        v = Fraction(dnum, 2 * self.den)
        b = Fraction(rec.beta) * st.profile.n
        a = abs(v)
        Phi = a if a >= b / 2 else v * v / b + b / 4
        if m & 1:
            Phi = Fraction(1, 2) - Phi
        return w * Fraction(rec.eps) / st.profile.n * Phi

    def grad_f(self, k: int, X) -> tuple[float, float]:
        """``grad f_k = grad(g_1 + ... + g_k)``."""
        gx = gy = 0.0
        for j in range(k):
            ev = self.stage_eval(j, X)
            gx += ev.grad[0]
            gy += ev.grad[1]
        return gx, gy

    def value_f(self, k: int, X) -> float:
        return math.fsum(self.stage_eval(j, X).value for j in range(k))

    def stage_values(self, X) -> list[float]:
        return [self.stage_eval(j, X).value for j in range(self.K)]

    # -- exceptional cover
    def cover_cube(self, j: int, X) -> tuple[int, int]:
        s = self.P - self.stages[j].cover_level
        return (X[0] >> s, X[1] >> s)

    def cube_in_cover(self, j: int, R) -> bool:
        """Does the level-``L_j`` cube ``R`` meet a frame or a corner strip of stage ``j``?"""
        st = self.stages[j]
        s = self.P - st.cover_level
        lo = (R[0] << s, R[1] << s)
        side = 1 << s
        c = self.cell(j, lo)
        a = self.center(j, c)
        half = 1 << (self.P - st.N - 1)
        inner = Fraction(half) - Fraction(st.record.alpha) * (1 << self.P)
        for i in range(2):
            far = max(abs(lo[i] - a[i]), abs(lo[i] + side - a[i]))
            if far > inner:
                return True
        E = self.normal(j, c)
        zs = [2 * st.profile.n * ((lo[0] + dx - a[0]) * E[0] + (lo[1] + dy - a[1]) * E[1]) for dx in (0, side) for dy in (0, side)]
        pad = Fraction(2 * st.profile.b) * self.den
        zmin, zmax = min(zs) - pad, max(zs) + pad
        return math.floor(zmax / self.den) >= math.ceil(zmin / self.den)

    def in_cover(self, j: int, X) -> bool:
        return self.cube_in_cover(j, self.cover_cube(j, X))

    def to_json(self) -> dict:
        return {"precision": self.P, "schedule": self.schedule.to_json(), "stages": [s.to_json() for s in self.stages]}

    @classmethod
    def from_json(cls, obj: dict) -> "Counterexample":
        ce = cls(QuantifierSchedule.from_json(obj["schedule"]), int(obj["precision"]))
        for st, data in zip(ce.stages, obj.get("stages", [])):
            for c1, c2, e1, e2 in data.get("normals", []):
                st.normals[(int(c1), int(c2))] = (int(e1), int(e2))
        return ce


def build_counterexample(stages: int = 3, epsilons: Sequence[float] | None = None, fraction: float = 0.5, n_min: int = 2) -> Counterexample:
    eps = list(epsilons) if epsilons is not None else default_epsilons(stages)
    return Counterexample(schedule_build(eps, fraction, n_min))


@dataclass(frozen=True, eq=False)
class CounterexampleField(ScalarField):
    """``f_K`` as a scalar field on the plane (float points are read exactly)."""

    construction: Counterexample
    config: dict

    @property
    def dim(self) -> int:  # type: ignore[override]
        return DIM

    def evaluate(self, points):
        pts = as_points(points, DIM)
        ce = self.construction
        vals = np.array([ce.value_f(ce.K, ce.exact(p)) for p in pts])
        err = 8 * U * math.fsum(r.sigma for r in ce.schedule.records) + 4 * U * np.abs(vals)
        return vals, err

    def gradient(self, points):
        pts = as_points(points, DIM)
        ce = self.construction
        return np.array([ce.grad_f(ce.K, ce.exact(p)) for p in pts])

    def to_json(self) -> dict:
        return dict(self.config)


def counterexample_from_config(obj: dict) -> CounterexampleField:
    stages = int(obj.get("stages", 3))
    eps = obj.get("epsilons")
    ce = build_counterexample(stages, eps, float(obj.get("fraction", 0.5)), int(obj.get("n_min", 2)))
    cfg = {"kind": "counterexample", "stages": stages, "fraction": ce.schedule.fraction, "n_min": ce.schedule.n_min}
    if eps is not None:
        cfg["epsilons"] = [float(e) for e in eps]
    return CounterexampleField(ce, cfg)


# ---------------------------------------------------------------------------
# Sampling


def _random_ints(rng: np.random.Generator, count: int, bits: int) -> list[int]:
    chunks = -(-bits // 62)
    raw = rng.integers(0, 1 << 62, size=(count, chunks), dtype=np.int64)
    out = []
    for row in raw.tolist():
        v = 0
        for part in row:
            v = (v << 62) | part
        out.append(v >> (62 * chunks - bits))
    return out


def sample_points(ce: Counterexample, k: int, count: int, seed: int) -> tuple[list[tuple[int, int]], np.ndarray]:
    """Exact points in the unit square drawn from four equally likely kinds:
    uniform (0), next to a frame of stage ``k`` (1), next to a corner strip
    (2), and on a corner strip inside a frame band (3).  Returns the points
    and their kind labels."""
    rng = np.random.default_rng(seed)
    P = ce.P
    st = ce.stages[k]
    xs = _random_ints(rng, count, P)
    ys = _random_ints(rng, count, P)
    kinds = rng.integers(0, 4, size=count)
    axis = rng.integers(0, 2, size=count)
    sides = rng.integers(0, 2, size=count)
    offs = rng.random(count)
    taus = rng.random(count)
    corner = rng.random((count, 2))
    half = 1 << (P - st.N - 1)
    alpha_int = Fraction(st.record.alpha) * (1 << P)
    n, b = st.profile.n, Fraction(st.profile.b)
    pts = []
    for i in range(count):
        X = [xs[i], ys[i]]
        kind = int(kinds[i])
        if kind:
            c = ce.cell(k, X)
            a = ce.center(k, c)
            E = ce.normal(k, c)
        if kind in (1, 3):
            ax = int(axis[i]) if kind == 1 else int(abs(E[0]) > abs(E[1]))
            depth = min(half - 1, round(2 * Fraction(float(offs[i])) * alpha_int))
            X[ax] = a[ax] + (half - depth if sides[i] else -(half - depth))
            if kind == 3 and corner[i, 0] < 0.5:
                # put the free coordinate in a frame band too: a frame corner
                fr = 1 - ax
                depth = min(half - 1, round(2 * Fraction(float(corner[i, 1])) * alpha_int))
                X[fr] = a[fr] + (half - depth if axis[i] else -(half - depth))
        if kind in (2, 3):
            _, _, Z, m, _ = ce._phase(k, X, c, E)
            tau = (2 * Fraction(float(taus[i])) - 1) * 2 * b
            dZ = (m + tau) * ce.den - Z
            if kind == 2:
                for j in range(2):
                    X[j] += round(dZ * E[j] / (2 * n * (1 << (2 * NORMAL_BITS))))
            else:
                fr = 1 - ax
                X[fr] += round(dZ / (2 * n * E[fr]))
        pts.append((int(X[0]) % (1 << P), int(X[1]) % (1 << P)))
    return pts, kinds


# ---------------------------------------------------------------------------
# Audits


@dataclass(frozen=True)
class ExceptionalCover:
    """Cover cubes of level ``level`` inside the window ``[lo, hi)`` (cube coordinates)."""

    k: int
    level: int
    lo: tuple[int, int]
    hi: tuple[int, int]
    cubes: list[DyadicCube]
    content: float
    active_strips: int
    formal_strips: int

    @property
    def delta(self) -> float:
        return math.ldexp(1.0, -self.level)

    def to_json(self) -> dict:
        return {
            "k": self.k, "level": self.level, "delta": self.delta,
            "window_lo": [str(v) for v in self.lo], "window_hi": [str(v) for v in self.hi],
            "cube_count": len(self.cubes), "content": self.content,
            "active_strips": self.active_strips, "formal_strips": str(self.formal_strips),
        }


def exceptional_cover(
    ce: Counterexample,
    k: int,
    region: Box | None = None,
    radius: int = 32,
    max_cubes: int = 200_000,
) -> ExceptionalCover:
    """Enumerate the level-``L_k`` cover cubes in a window and measure their 1-content.

    Without ``region`` the window has ``2*radius`` cubes per side around the
    point ``(1/2 + alpha_k, 1/2 + alpha_k)``, where a frame edge of the cell
    above ``(1/2, 1/2)`` meets its plateau.  The window is located exactly, so
    it stays meaningful at scales below double precision.
    """
    st = ce.stages[k]
    L = st.cover_level
    if region is None:
        c = (1 << (L - 1)) + math.floor(Fraction(st.record.alpha) * (1 << L))
        lo, hi = (c - radius, c - radius), (c + radius, c + radius)
    else:
        lo = tuple(math.floor(math.ldexp(v, L)) for v in region.lo)
        hi = tuple(math.ceil(math.ldexp(v, L)) for v in region.hi)
    total = (hi[0] - lo[0]) * (hi[1] - lo[1])
    if total > max_cubes:
        raise ValueError(f"window needs {total} cover cubes, more than max_cubes={max_cubes}")
    cubes = [
        DyadicCube(L, (i, j))
        for i in range(lo[0], hi[0]) for j in range(lo[1], hi[1])
        if ce.cube_in_cover(k, (i, j))
    ]
    # corner lines meeting the stage cells under the window, against the formal 4n per cell
    shift = L - st.N
    cells = [
        (i, j)
        for i in range(lo[0] >> shift, ((hi[0] - 1) >> shift) + 1)
        for j in range(lo[1] >> shift, ((hi[1] - 1) >> shift) + 1)
    ]
    half = 1 << (ce.P - st.N - 1)
    active = 0
    for c in cells:
        E = ce.normal(k, c)
        zs = [2 * st.profile.n * (dx * E[0] + dy * E[1]) for dx in (-half, half) for dy in (-half, half)]
        active += math.floor(Fraction(max(zs), ce.den)) - math.ceil(Fraction(min(zs), ce.den)) + 1
    formal = 4 * st.profile.n * len(cells)
    return ExceptionalCover(k, L, lo, hi, cubes, len(cubes) * math.ldexp(1.0, -L), active, formal)


def _rel_close(a: float, b: float, tol: float = 0.10, floor: float = 1e-12) -> bool:
    if max(abs(a), abs(b)) <= floor:
        return True
    return abs(a - b) <= tol * max(abs(a), abs(b))


@dataclass
class StageAudit:
    k: int
    count: int
    sup_ratio: float  # max |g_{k+1}| / sigma_k
    sup_violations: int
    grad_ratio: float  # max |grad g_{k+1}| / eps_k
    grad_bound: float  # 2 C with C the certified gradient constant
    orth_C: tuple[float, float]
    orth_stable: bool
    increment_C: tuple[float, float]
    low_gradient: int
    escapes: int
    uncovered_exceptional: int
    off_cover: int
    continuity_ratio: float  # sampled max |grad f_k(z)-grad f_k(w)| / eta_k at |z-w| <= 2^{1-N_k}
    cover: ExceptionalCover

    @property
    def passed(self) -> bool:
        return (
            self.sup_violations == 0
            and self.grad_ratio <= self.grad_bound
            and self.orth_stable
            and min(self.increment_C) > 0
            and self.escapes == 0
            and self.uncovered_exceptional == 0
            and self.continuity_ratio < 1
        )

    def to_json(self) -> dict:
        return {
            "k": self.k, "count": self.count, "sup_ratio": self.sup_ratio, "sup_violations": self.sup_violations,
            "grad_ratio": self.grad_ratio, "grad_bound": self.grad_bound, "orth_C": list(self.orth_C),
            "orth_stable": self.orth_stable, "increment_C": list(self.increment_C),
            "low_gradient": self.low_gradient, "escapes": self.escapes,
            "uncovered_exceptional": self.uncovered_exceptional, "off_cover": self.off_cover,
            "continuity_ratio": self.continuity_ratio, "cover": self.cover.to_json(), "passed": self.passed,
        }


def stage_audit(ce: Counterexample, k: int, count: int = 100_000, seed: int = 0, continuity_pairs: int = 2000) -> StageAudit:
    """Sampled checks of ``g_{k+1}``: sup norm, gradient size, near-orthogonality
    and squared-gradient growth off the cover, and completeness of the cover.

    For ``k >= 1`` half of the points are drawn next to the frames and strips
    of stage ``k-1``, where ``grad f_k`` turns and the orthogonality defect
    peaks; the rest come from the stage-``k`` mixture.  The orthogonality and
    growth constants are measured on two interleaved halves with the same mix.
    Low-gradient points (``|grad g| < eps_k/2``) must all lie in cover cubes.
    """
    rec = ce.stages[k].record
    if k == 0:
        pts, _ = sample_points(ce, k, count, seed)
    else:
        own, _ = sample_points(ce, k, count - count // 2, seed)
        prev, _ = sample_points(ce, k - 1, count // 2, seed + 1)
        pts = [p for pair in zip(own, prev) for p in pair] + own[len(prev):]
    orth = [0.0, 0.0]
    inc = [math.inf, math.inf]
    sup = grad = 0.0
    sup_bad = low = escapes = uncovered = off = 0
    scale_orth = rec.eps * math.sqrt(rec.eta)
    tops: list[list] = [[], []]
    for i, X in enumerate(pts):
        batch = (i // 2) % 2
        ev = ce.stage_eval(k, X)
        gk = ce.grad_f(k, X)
        sup = max(sup, abs(ev.value) / rec.sigma)
        if abs(ev.value) > rec.sigma:
            sup_bad += 1
        gnorm = math.hypot(*ev.grad)
        grad = max(grad, gnorm / rec.eps)
        covered = ce.in_cover(k, X)
        if (ev.in_frame or ev.in_strip) and not covered:
            uncovered += 1
        if gnorm < rec.eps / 2:
            low += 1
            if not covered:
                escapes += 1
        if covered:
            continue
        off += 1
        dot = gk[0] * ev.grad[0] + gk[1] * ev.grad[1]
        orth[batch] = max(orth[batch], abs(dot) / scale_orth)
        tops[batch].append((abs(dot) / scale_orth, X))
        new = (gk[0] + ev.grad[0]) ** 2 + (gk[1] + ev.grad[1]) ** 2
        old = gk[0] ** 2 + gk[1] ** 2
        inc[batch] = min(inc[batch], (new - old) / rec.eps ** 2)
    orth = [
        _refine_orthogonality(ce, k, tops[b], scale_orth, np.random.default_rng([seed, k, b]))
        for b in range(2)
    ] if k > 0 else orth
    cont = continuity_audit(ce, k, continuity_pairs, seed + 2)
    return StageAudit(
        k, count, sup, sup_bad, grad, 2 * rec.gradient_constant, (orth[0], orth[1]), _rel_close(orth[0], orth[1]),
        (inc[0], inc[1]), low, escapes, uncovered, off, cont, exceptional_cover(ce, k),
    )


def _orthogonality_at(ce: Counterexample, k: int, X, scale: float) -> float:
    if ce.in_cover(k, X):
        return -1.0
    g = ce.stage_eval(k, X).grad
    gk = ce.grad_f(k, X)
    return abs(gk[0] * g[0] + gk[1] * g[1]) / scale


def _refine_orthogonality(ce, k, candidates, scale, rng, starts: int = 32, iters: int = 200) -> float:
    """Hill-climb from the best sampled points to sharpen the sampled supremum.

    Steps are random, start at a sixteenth of the stage cell and shrink after
    failures; only off-cover points are admissible.
    """
    candidates = sorted(candidates, key=lambda t: (-t[0], t[1]))[:starts]
    best = max((c[0] for c in candidates), default=0.0)
    base = math.ldexp(1.0, ce.P - ce.stages[k].N - 4)
    for val, X in candidates:
        radius = base
        for _ in range(iters):
            step = rng.normal(size=2) * radius
            Y = (X[0] + int(round(step[0])), X[1] + int(round(step[1])))
            v = _orthogonality_at(ce, k, Y, scale)
            if v > val:
                val, X = v, Y
            else:
                radius *= 0.97
        best = max(best, val)
    return best


def continuity_audit(ce: Counterexample, k: int, pairs: int, seed: int) -> float:
    """Sampled ``max |grad f_k(z) - grad f_k(w)| / eta_k`` over ``|z - w| <= 2^{1-N_k}``.

    Base points are drawn next to the strips of the previous stage, where the
    gradient turns fastest.
    """
    if k == 0:
        return 0.0
    rec = ce.stages[k].record
    rng = np.random.default_rng(seed)
    base, _ = sample_points(ce, k - 1, pairs, seed)
    radius = math.ldexp(2.0, -rec.N)
    worst = 0.0
    for X in base:
        th = rng.random() * 2 * math.pi
        r = radius * math.sqrt(rng.random())
        Y = (X[0] + round(math.ldexp(r * math.cos(th), ce.P)), X[1] + round(math.ldexp(r * math.sin(th), ce.P)))
        a = ce.grad_f(k, X)
        b = ce.grad_f(k, Y)
        worst = max(worst, math.hypot(a[0] - b[0], a[1] - b[1]) / rec.eta)
    return worst


@dataclass
class ShellRow:
    j: int
    lo: float
    hi: float
    count: int
    max_ratio: float  # sup |D2 f_K(x, h)| / |h|
    bound: float

    @property
    def passed(self) -> bool:
        return self.max_ratio <= self.bound

    def to_json(self) -> dict:
        return {"j": self.j, "lo": self.lo, "hi": self.hi, "count": self.count, "max_ratio": self.max_ratio, "bound": self.bound, "passed": self.passed}


def shell_audit(ce: Counterexample, count: int = 2000, seed: int = 0, inner_extra: int = 6) -> list[ShellRow]:
    """Second differences of ``f_K`` on the shells ``2^-N_{j+1} < |h| <= 2^-N_j``.

    The bound on shell ``j`` is ``(sum_{i=j}^{K-1} eta_i + 2 C eps_j) |h|``
    with ``C`` the largest certified gradient constant; the innermost shell
    runs down to ``2^{-N_{K-1}-inner_extra}``.
    """
    K = ce.K
    recs = [s.record for s in ce.stages]
    C = max(r.gradient_constant for r in recs)
    rows = []
    for j in range(K):
        hi_exp = -recs[j].N
        lo_exp = -recs[j + 1].N if j + 1 < K else -recs[j].N - inner_extra
        rng = np.random.default_rng([seed, j])
        base, _ = sample_points(ce, j, count, seed + 100 + j)
        bound = math.fsum(r.eta for r in recs[j:]) + 2 * C * recs[j].eps
        worst = 0.0
        for X in base:
            e = lo_exp + (hi_exp - lo_exp) * rng.random()
            th = rng.random() * 2 * math.pi
            r = 2.0 ** e
            H = (round(math.ldexp(r * math.cos(th), ce.P)), round(math.ldexp(r * math.sin(th), ce.P)))
            hn = math.ldexp(math.hypot(float(H[0]), float(H[1])), -ce.P)
            if hn == 0:
                continue
            xp = (X[0] + H[0], X[1] + H[1])
            xm = (X[0] - H[0], X[1] - H[1])
            d2 = sum(
                (ce.stage_value_exact(i, xp) + ce.stage_value_exact(i, xm) - 2 * ce.stage_value_exact(i, X) for i in range(K)),
                Fraction(0),
            )
            worst = max(worst, abs(float(d2)) / hn)
        rows.append(ShellRow(j, math.ldexp(1.0, lo_exp), math.ldexp(1.0, hi_exp), count, worst, bound))
    return rows


@dataclass
class ProbeRow:
    k: int
    count: int
    max_deviation: float  # |D f / |z-x| - <grad f_k(x), unit>|
    bound: float  # 2 eta_k + 2(d-1) sum_{j>=k} sigma_j / sigma_k
    tail_bound: float  # 2 eta_k + 4(d-1): the same with the tail replaced by 2 sigma_k
    quoted_bound: float  # 2 eta_k + 2(d-1)
    min_margin: float  # min over samples of D f/|z-x| - (|grad f_k(x)| - tail_bound)
    min_gradient: float

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.bound

    def to_json(self) -> dict:
        return {
            "k": self.k, "count": self.count, "max_deviation": self.max_deviation, "bound": self.bound,
            "tail_bound": self.tail_bound, "quoted_bound": self.quoted_bound,
            "min_margin": self.min_margin, "min_gradient": self.min_gradient, "passed": self.passed,
        }


def probe_audit(ce: Counterexample, count: int = 2000, seed: int = 0) -> list[ProbeRow]:
    """Divided differences of ``f_K`` at distance ``sigma_k`` along ``grad f_k(x)``."""
    rows = []
    d = DIM
    recs = [s.record for s in ce.stages]
    for k in range(1, ce.K):
        rec = recs[k]
        rng = np.random.default_rng([seed, k])
        xs = _random_ints(rng, count, ce.P)
        ys = _random_ints(rng, count, ce.P)
        tail = math.fsum(r.sigma for r in recs[k:])
        worst = 0.0
        margin = math.inf
        gmin = math.inf
        for X in zip(xs, ys):
            g = ce.grad_f(k, X)
            gn = math.hypot(*g)
            if gn == 0:
                continue
            Z = (X[0] + round(math.ldexp(rec.sigma * g[0] / gn, ce.P)), X[1] + round(math.ldexp(rec.sigma * g[1] / gn, ce.P)))
            step = (Z[0] - X[0], Z[1] - X[1])
            dist = math.ldexp(math.hypot(float(step[0]), float(step[1])), -ce.P)
            diff = float(sum((ce.stage_value_exact(i, Z) - ce.stage_value_exact(i, X) for i in range(ce.K)), Fraction(0)))
            dd = diff / dist
            proj = (g[0] * math.ldexp(float(step[0]), -ce.P) + g[1] * math.ldexp(float(step[1]), -ce.P)) / dist
            worst = max(worst, abs(dd - proj))
            margin = min(margin, dd - (gn - 2 * rec.eta - 4 * (d - 1)))
            gmin = min(gmin, gn)
        bound = 2 * rec.eta + 2 * (d - 1) * tail / rec.sigma
        rows.append(ProbeRow(k, count, worst, bound, 2 * rec.eta + 4 * (d - 1), 2 * rec.eta + 2 * (d - 1), margin, gmin))
    return rows


@dataclass
class GrowthSummary:
    count: int
    off_all_covers: int
    min_constant: float  # min over points and stages of (|grad f_{k+1}|^2 - |grad f_k|^2) / eps_k^2
    min_cumulative: float  # min |grad f_K|^2 / sum eps_k^2

    def to_json(self) -> dict:
        return {"count": self.count, "off_all_covers": self.off_all_covers, "min_constant": self.min_constant, "min_cumulative": self.min_cumulative}


def growth_audit(ce: Counterexample, count: int = 2000, seed: int = 0) -> GrowthSummary:
    """Squared-gradient growth along all stages at uniform points outside every cover."""
    rng = np.random.default_rng(seed)
    xs = _random_ints(rng, count, ce.P)
    ys = _random_ints(rng, count, ce.P)
    eps2 = [s.record.eps ** 2 for s in ce.stages]
    total = math.fsum(eps2)
    cmin = cum = math.inf
    off = 0
    for X in zip(xs, ys):
        if any(ce.in_cover(j, X) for j in range(ce.K)):
            continue
        off += 1
        gx = gy = 0.0
        for j in range(ce.K):
            ev = ce.stage_eval(j, X)
            old = gx * gx + gy * gy
            gx += ev.grad[0]
            gy += ev.grad[1]
            cmin = min(cmin, (gx * gx + gy * gy - old) / eps2[j])
        cum = min(cum, (gx * gx + gy * gy) / total)
    return GrowthSummary(count, off, cmin, cum)
