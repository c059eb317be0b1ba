"""Stopping-time selection of maximal cubes, cone filtering, polygonal
mean-value paths, and the generation pipeline that builds a Cantor-type
set on which the discrete gradients stay bounded.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dimension import GenerationFamily, NestedConstants, nested_constants, packing_constant
from .dyadic import Box, DyadicCube, dilate, pairwise_disjoint
from .fields import SampleSpec, ScalarField, linear_field
from .gradient import DiscreteGradient, discrete_gradient, discrete_gradients, gradient_modulus, trajectories


class CoverageError(RuntimeError):
    """The covering does not contain a point it was required to cover."""


class ExplorationLimitError(RuntimeError):
    """The stopping-time search would exceed its active-cube budget."""


@dataclass(frozen=True)
class StoppingParams:
    """``M`` gradient size, ``epsilon`` in (0, 1), optional cone direction ``u``.

    ``max_depth`` is the finest level explored; ``local_depth`` optionally caps
    the search at that many levels below the cube being searched.  ``eta`` is
    an optional target for the unresolved length ratio (measured either way).
    """

    M: float
    epsilon: float
    u: tuple[float, ...] | None = None
    max_depth: int = 14
    eta: float | None = None
    max_active: int = 4_000_000
    local_depth: int | None = None

    def __post_init__(self):
        if not self.M > 0:
            raise ValueError("M must be positive")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")

    @property
    def N(self) -> float:
        return self.epsilon * self.M

    def depth_below(self, Q: DyadicCube) -> int:
        if self.local_depth is None:
            return self.max_depth
        return min(self.max_depth, Q.level + self.local_depth)

    @property
    def norm_drop_applicable(self) -> bool:
        return self.epsilon * self.M > 20


@dataclass
class SelectedFamily:
    """Maximal cubes of ``parent`` whose gradient deviates from ``reference`` by ``>= threshold``."""

    parent: DyadicCube
    reference: np.ndarray
    threshold: float
    cubes: list[DyadicCube]
    gradients: np.ndarray
    deviations: np.ndarray
    parent_deviations: np.ndarray
    unresolved: list[DyadicCube]
    unresolved_gradients: np.ndarray
    max_jump: float
    max_depth: int
    active_per_level: list[int] = field(default_factory=list)
    inner: np.ndarray | None = None
    direction: np.ndarray | None = None
    unfiltered_length_ratio: float | None = None

    def __len__(self) -> int:
        return len(self.cubes)

    @property
    def length_sum(self) -> float:
        return float(sum(c.side for c in self.cubes))

    @property
    def length_ratio(self) -> float:
        return self.length_sum / self.parent.side

    @property
    def unresolved_length_ratio(self) -> float:
        return float(sum(c.side for c in self.unresolved)) / self.parent.side

    def subset(self, mask: np.ndarray, inner: np.ndarray | None = None, direction=None) -> SelectedFamily:
        idx = np.flatnonzero(mask)
        return SelectedFamily(
            self.parent,
            self.reference,
            self.threshold,
            [self.cubes[i] for i in idx],
            self.gradients[idx],
            self.deviations[idx],
            self.parent_deviations[idx],
            self.unresolved,
            self.unresolved_gradients,
            self.max_jump,
            self.max_depth,
            self.active_per_level,
            None if inner is None else inner[idx],
            direction,
            self.length_ratio,
        )

    def to_json(self) -> dict:
        rows = []
        for i, c in enumerate(self.cubes):
            row = {
                "cube": c.to_json(),
                "V": [float(v) for v in self.gradients[i]],
                "deviation": float(self.deviations[i]),
                "parent_deviation": float(self.parent_deviations[i]),
            }
            if self.inner is not None:
                row["cone_inner"] = float(self.inner[i])
            rows.append(row)
        return {
            "parent": self.parent.to_json(),
            "reference": [float(v) for v in self.reference],
            "threshold": self.threshold,
            "selected": rows,
            "unresolved_count": len(self.unresolved),
            "length_ratio": self.length_ratio,
            "unresolved_length_ratio": self.unresolved_length_ratio,
            "max_jump": self.max_jump,
            "active_per_level": self.active_per_level,
        }


def _sorted(level_coords: np.ndarray) -> np.ndarray:
    if len(level_coords) == 0:
        return np.arange(0)
    return np.lexsort(level_coords.T[::-1])


def maximal_deviation_cubes(
    f: ScalarField,
    Q: DyadicCube,
    threshold: float,
    max_depth: int,
    reference=None,
    include_root: bool = False,
    restrict: Callable[[int, np.ndarray], np.ndarray] | None = None,
    max_active: int = 4_000_000,
    max_selected: int | None = None,
) -> SelectedFamily:
    """Maximal dyadic subcubes ``R`` of ``Q`` with ``|V(R) - reference| >= threshold``.

    ``reference`` defaults to ``V(Q)``, in which case ``Q`` itself never
    qualifies.  The search descends level by level; cubes below threshold at
    ``max_depth`` are returned as unresolved.  ``restrict(level, coords)`` can
    prune the search to cubes meeting a region of interest.  With
    ``max_selected`` the search stops after the first level at which that many
    cubes have been selected; the still-active cubes are reported unresolved.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    d = Q.dim
    root = np.array([Q.coords], dtype=np.int64)
    VQ, _ = discrete_gradients(f, Q.level, root)
    ref = VQ[0] if reference is None else np.asarray(reference, dtype=float)
    dev_root = float(np.linalg.norm(VQ[0] - ref))
    sel_cubes: list[DyadicCube] = []
    sel_V, sel_dev, sel_pdev = [], [], []
    max_jump = 0.0
    active_per_level = [1]
    if include_root and dev_root >= threshold:
        return SelectedFamily(
            Q, ref, threshold, [Q], VQ.copy(), np.array([dev_root]), np.array([math.nan]),
            [], np.zeros((0, d)), 0.0, max_depth, active_per_level,
        )
    active, active_V, active_dev = root, VQ, np.array([dev_root])
    offsets = np.array(list(itertools.product((0, 1), repeat=d)), dtype=np.int64)
    level = Q.level
    while level < max_depth and len(active):
        level += 1
        kids = (2 * active[:, None, :] + offsets[None, :, :]).reshape(-1, d)
        pV = np.repeat(active_V, len(offsets), axis=0)
        pdev = np.repeat(active_dev, len(offsets))
        if restrict is not None:
            keep = restrict(level, kids)
            kids, pV, pdev = kids[keep], pV[keep], pdev[keep]
        if len(kids) > max_active:
            raise ExplorationLimitError(f"{len(kids)} active cubes at level {level} exceed budget {max_active}")
        V, _ = discrete_gradients(f, level, kids)
        if len(kids):
            max_jump = max(max_jump, float(np.max(np.linalg.norm(V - pV, axis=1))))
        dev = np.linalg.norm(V - ref, axis=1)
        hit = dev >= threshold
        hk = kids[hit]
        order = _sorted(hk)
        sel_cubes.extend(DyadicCube(level, tuple(int(k) for k in hk[i])) for i in order)
        sel_V.append(V[hit][order])
        sel_dev.append(dev[hit][order])
        sel_pdev.append(pdev[hit][order])
        active, active_V, active_dev = kids[~hit], V[~hit], dev[~hit]
        active_per_level.append(int(len(active)))
        if max_selected is not None and len(sel_cubes) >= max_selected:
            break
    order = _sorted(active)
    unresolved = [DyadicCube(level, tuple(int(k) for k in active[i])) for i in order]
    cat = lambda parts, shape: np.concatenate(parts) if parts else np.zeros(shape)
    return SelectedFamily(
        Q,
        ref,
        threshold,
        sel_cubes,
        cat(sel_V, (0, d)).reshape(-1, d),
        cat(sel_dev, (0,)),
        cat(sel_pdev, (0,)),
        unresolved,
        active_V[order] if len(active) else np.zeros((0, d)),
        max_jump,
        max_depth,
        active_per_level,
    )


# ---------------------------------------------------------------------------
# Audits on selected families


@dataclass(frozen=True)
class StoppingAudit:
    soundness_violations: int
    ancestry_violations: int
    sandwich_violations: int
    disjoint: bool
    contained: bool
    modulus: float
    max_excess: float

    @property
    def passed(self) -> bool:
        return (
            self.soundness_violations == 0
            and self.ancestry_violations == 0
            and self.sandwich_violations == 0
            and self.disjoint
            and self.contained
        )

    def to_json(self) -> dict:
        return {**self.__dict__, "passed": self.passed}


def audit_stopping(f: ScalarField, family: SelectedFamily, modulus: float | None = None) -> StoppingAudit:
    """Recompute every selected cube's deviation chain from scratch.

    Soundness: deviation ``>= threshold`` and parent deviation ``< threshold``.
    Ancestry: every cube strictly between the root and the selected cube is
    below threshold.  Sandwich: deviation ``<= threshold + w`` where ``w`` is
    ``modulus`` (defaults to the largest parent/child jump seen in the search).
    """
    Q = family.parent
    thr = family.threshold
    ref = family.reference
    w = family.max_jump if modulus is None else max(modulus, family.max_jump)
    by_level: dict[int, list[int]] = {}
    for i, c in enumerate(family.cubes):
        by_level.setdefault(c.level, []).append(i)
    sound = anc = sand = 0
    excess = -math.inf
    for level, idx in by_level.items():
        coords = np.array([family.cubes[i].coords for i in idx], dtype=np.int64)
        V, _ = discrete_gradients(f, level, coords)
        dev = np.linalg.norm(V - ref, axis=1)
        if level - 1 >= Q.level:
            pV, _ = discrete_gradients(f, level - 1, coords >> 1)
            pdev = np.linalg.norm(pV - ref, axis=1)
        else:
            pdev = np.full(len(idx), -math.inf)
        sound += int(np.sum((dev < thr) | (pdev >= thr)))
        excess = max(excess, float(np.max(dev - thr)))
        sand += int(np.sum(dev > thr + w))
        for lv in range(Q.level, level):
            aV, _ = discrete_gradients(f, lv, coords >> (level - lv))
            anc += int(np.sum(np.linalg.norm(aV - ref, axis=1) >= thr))
    contained = all(Q.contains_cube(c) for c in family.cubes)
    return StoppingAudit(sound, anc, sand, pairwise_disjoint(family.cubes), contained, w, excess)


def cone_filter(family: SelectedFamily, base: DiscreteGradient | np.ndarray, u, epsilon: float) -> SelectedFamily:
    """Keep cubes with ``<V(Q_j) - V(Q), u> >= (2/3) epsilon^2 M`` where ``M = |V(Q)|``."""
    VQ = base.vector if isinstance(base, DiscreteGradient) else np.asarray(base, dtype=float)
    u = np.asarray(u, dtype=float)
    u = u / np.linalg.norm(u)
    M = float(np.linalg.norm(VQ))
    inner = (family.gradients - VQ) @ u if len(family.cubes) else np.zeros(0)
    keep = inner >= (2.0 / 3.0) * epsilon**2 * M
    return family.subset(keep, inner=inner, direction=u)


def norm_drop_audit(family: SelectedFamily, M: float, epsilon: float, modulus: float | None = None) -> dict:
    """Check ``|V(Q_j*)| < M C2(eps)`` with ``C2(eps) = (1 - eps^2/6)^(1/2)``."""
    C2 = math.sqrt(1.0 - epsilon**2 / 6.0)
    norms = np.linalg.norm(family.gradients, axis=1) if len(family.cubes) else np.zeros(0)
    w = family.max_jump if modulus is None else modulus
    return {
        "C2": C2,
        "applicable": bool(epsilon * M > 20 and w <= 1.0),
        "max_norm_ratio": float(norms.max() / M) if len(norms) else 0.0,
        "violations": int(np.sum(norms >= M * C2)),
    }


# ---------------------------------------------------------------------------
# Coverings and polygonal paths


@dataclass(frozen=True)
class CoveringCube:
    cube: DyadicCube
    label: np.ndarray
    kind: str
    gradient: np.ndarray | None = None


def build_covering(family: SelectedFamily, e, shift=None) -> list[CoveringCube]:
    """Selected cubes labelled ``V/|V|``; unresolved cubes labelled ``e``.

    ``shift`` is added to every gradient first (used when the path is run for
    the field minus a linear function).
    """
    e = np.asarray(e, dtype=float)
    s = np.zeros_like(e) if shift is None else np.asarray(shift, dtype=float)
    out = []
    for c, V in zip(family.cubes, family.gradients):
        W = V + s
        n = np.linalg.norm(W)
        out.append(CoveringCube(c, W / n if n > 0 else e, "selected", W))
    for c, V in zip(family.unresolved, family.unresolved_gradients):
        out.append(CoveringCube(c, e, "residual", V + s))
    return out


class _CoverIndex:
    def __init__(self, covering: Sequence[CoveringCube]):
        self.covering = covering
        self.by_level: dict[int, dict[tuple[int, ...], int]] = {}
        for i, cc in enumerate(covering):
            self.by_level.setdefault(cc.cube.level, {})[cc.cube.coords] = i
        self.levels = sorted(self.by_level)
        self.d = covering[0].cube.dim if covering else 0
        self.offsets = list(itertools.product((-1, 0, 1), repeat=self.d))

    def candidates(self, p: np.ndarray) -> list[int]:
        """Indices of covering cubes whose open double contains ``p``."""
        out = []
        for L in self.levels:
            table = self.by_level[L]
            base = [math.floor(math.ldexp(x, L)) for x in p]
            side = math.ldexp(1.0, -L)
            for off in self.offsets:
                key = tuple(b + o for b, o in zip(base, off))
                i = table.get(key)
                if i is None:
                    continue
                c = self.covering[i].cube.center
                if np.all(np.abs(p - c) < side):
                    out.append(i)
        return out

    def choose(self, p: np.ndarray) -> int | None:
        cand = self.candidates(p)
        if not cand:
            return None
        return min(cand, key=lambda i: (float(np.linalg.norm(p - self.covering[i].cube.center)), i))


def _tiles(Q: DyadicCube, cubes: Sequence[DyadicCube]) -> bool:
    """Exact check that ``cubes`` partition ``Q``."""
    if not cubes or not pairwise_disjoint(cubes) or not all(Q.contains_cube(c) for c in cubes):
        return False
    deepest = max(c.level for c in cubes)
    d = Q.dim
    return sum(2 ** (d * (deepest - c.level)) for c in cubes) == 2 ** (d * (deepest - Q.level))


def check_covering(Q: DyadicCube, covering: Sequence[CoveringCube], resolution: int = 6) -> None:
    """Raise :class:`CoverageError` unless the doubled covering cubes contain ``(1/2) Q``."""
    if _tiles(Q, [c.cube for c in covering]):
        return
    index = _CoverIndex(covering)
    half = dilate(Q, 0.5)
    axes = [np.linspace(lo, hi, 2**resolution + 1) for lo, hi in zip(half.lo, half.hi)]
    for p in itertools.product(*axes):
        p = np.array(p)
        if not index.candidates(p):
            raise CoverageError(f"point {tuple(float(x) for x in p)} of the half cube is not covered")


@dataclass
class PolygonalPath:
    vertices: np.ndarray
    labels: np.ndarray
    cover_index: np.ndarray
    kinds: list[str]
    direction: np.ndarray

    @property
    def projections(self) -> np.ndarray:
        return self.vertices @ self.direction

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.projections) > 0))

    def to_rows(self) -> list[dict]:
        rows = []
        for j, v in enumerate(self.vertices):
            row = {"j": j, **{f"x{i + 1}": float(x) for i, x in enumerate(v)}}
            if j < len(self.labels):
                row.update({f"v{i + 1}": float(x) for i, x in enumerate(self.labels[j])})
                row["kind"] = self.kinds[j]
            else:
                row.update({f"v{i + 1}": "" for i in range(len(v))})
                row["kind"] = "end"
            rows.append(row)
        return rows


def polygonal_descent(
    f: ScalarField | None,
    Q: DyadicCube,
    params: StoppingParams,
    covering: Sequence[CoveringCube],
    e=None,
    max_steps: int = 1_000_000,
    check: bool = True,
) -> PolygonalPath:
    """Walk ``a_{j+1} = a_j + diam(C_k) v_k`` from ``center(Q) - (l/8) e`` until leaving ``(1/2) Q``.

    ``C_k`` is the doubled covering cube chosen at ``a_j`` (nearest center,
    then lowest index) and ``v_k`` its label.  ``e`` defaults to
    ``V(Q)/|V(Q)|``.
    """
    if e is None:
        if f is None:
            raise ValueError("need a field or an explicit direction e")
        VQ = discrete_gradient(f, Q).vector
        e = VQ / np.linalg.norm(VQ)
    e = np.asarray(e, dtype=float)
    e = e / np.linalg.norm(e)
    if check:
        check_covering(Q, covering)
    index = _CoverIndex(covering)
    half = dilate(Q, 0.5)
    a = Q.center - (Q.side / 8.0) * e
    verts, labels, idxs, kinds = [a.copy()], [], [], []
    for _ in range(max_steps):
        k = index.choose(a)
        if k is None:
            raise CoverageError(f"path vertex {tuple(float(x) for x in a)} is not covered")
        cc = covering[k]
        step = 2.0 * cc.cube.diameter
        a = a + step * cc.label
        verts.append(a.copy())
        labels.append(cc.label)
        idxs.append(k)
        kinds.append(cc.kind)
        if not half.contains(a)[0]:
            break
    else:
        raise RuntimeError("polygonal path did not leave the half cube")
    return PolygonalPath(np.array(verts), np.array(labels), np.array(idxs, dtype=int), kinds, e)


def mean_value_audit(
    path: PolygonalPath, covering: Sequence[CoveringCube], M: float, epsilon: float, Q: DyadicCube
) -> dict:
    """Compare ``sum_J |V|^2/<V,e> dpi`` with ``M (pi(a_n) - pi(a_1))``.

    ``J`` are segments labelled by selected cubes; the good set ``G`` collects
    those with ``<V - M e, e> <= -(2/3) epsilon N``.
    """
    e = path.direction
    pi = path.projections
    dpi = np.diff(pi)
    N = epsilon * M
    lhs, residual_len, good_len = 0.0, 0.0, 0.0
    good, fallback = [], 0
    for j, k in enumerate(path.cover_index):
        cc = covering[k]
        if cc.kind != "selected":
            residual_len += dpi[j]
            continue
        V = cc.gradient
        ve = float(V @ e)
        if ve <= 0:
            fallback += 1
            continue
        lhs += float(V @ V) / ve * dpi[j]
        if float((V - M * e) @ e) <= -(2.0 / 3.0) * epsilon * N:
            good.append(int(k))
            good_len += dpi[j]
    total = float(pi[-1] - pi[0])
    rhs = M * total
    return {
        "lhs": lhs,
        "rhs": rhs,
        "C": abs(lhs - rhs) / Q.side,
        "monotone": path.monotone,
        "min_step": float(dpi.min()) if len(dpi) else 0.0,
        "segments": int(len(dpi)),
        "residual_projection": residual_len,
        "good_projection_ratio": good_len / total if total > 0 else 0.0,
        "nonpositive_labels": fallback,
        "good_indices": sorted(set(good)),
    }


# ---------------------------------------------------------------------------
# One application of the selection step


@dataclass
class SelectionRun:
    u: np.ndarray
    path: PolygonalPath
    mean_value: dict
    selected: list[DyadicCube]
    selected_gradients: np.ndarray
    cone_violations: int
    length_ratio: float
    packing: float

    def to_json(self) -> dict:
        mv = {k: v for k, v in self.mean_value.items() if k != "good_indices"}
        return {
            "u": [float(x) for x in self.u],
            "path_vertices": int(len(self.path.vertices)),
            "mean_value": mv,
            "selected": [c.to_json() for c in self.selected],
            "cone_violations": self.cone_violations,
            "length_ratio": self.length_ratio,
            "packing": self.packing,
        }


@dataclass
class SelectionResult:
    cube: DyadicCube
    M: float
    epsilon: float
    VQ: np.ndarray
    family: SelectedFamily
    runs: list[SelectionRun]

    @property
    def N(self) -> float:
        return self.epsilon * self.M


def _run_direction(Q, family, VQ, M, epsilon, u, params, check=True) -> SelectionRun:
    """Path and selection for cone direction ``u`` via ``g = f - M<u + e, x>``."""
    e = VQ / M
    u = np.asarray(u, dtype=float)
    u = u / np.linalg.norm(u)
    shift = -M * (u + e)
    eg = -u
    covering = build_covering(family, eg, shift=shift)
    path = polygonal_descent(None, Q, params, covering, e=eg, check=check)
    mv = mean_value_audit(path, covering, M, epsilon, Q)
    idx = mv["good_indices"]
    cubes = [covering[i].cube for i in idx]
    grads = np.array([covering[i].gradient - shift for i in idx]).reshape(-1, Q.dim)
    inner = (grads - M * e) @ u if len(idx) else np.zeros(0)
    cone_bad = int(np.sum(inner < (2.0 / 3.0) * epsilon**2 * M))
    ratio = sum(c.side for c in cubes) / Q.side
    pack = packing_constant(cubes, 1.0, top_level=Q.level)[0] if cubes else 0.0
    return SelectionRun(u, path, mv, cubes, grads, cone_bad, ratio, pack)


def selection_step(
    f: ScalarField,
    Q: DyadicCube,
    params: StoppingParams,
    directions: Sequence | None = None,
    check: bool = True,
) -> SelectionResult:
    """Run the selection in ``Q`` with threshold ``N = epsilon |V(Q)|``.

    For each cone direction ``u`` (default ``params.u`` or ``-V(Q)/|V(Q)|``)
    a polygonal path is traced and the cubes of its good segments returned.
    """
    VQ = discrete_gradient(f, Q).vector
    M = float(np.linalg.norm(VQ))
    if M == 0:
        raise ValueError("selection needs a cube with nonzero discrete gradient")
    family = maximal_deviation_cubes(f, Q, params.epsilon * M, params.depth_below(Q), max_active=params.max_active)
    if directions is None:
        directions = [params.u] if params.u is not None else [-VQ / M]
    runs = [_run_direction(Q, family, VQ, M, params.epsilon, u, params, check) for u in directions]
    return SelectionResult(Q, M, params.epsilon, VQ, family, runs)


# ---------------------------------------------------------------------------
# Generation pipeline


@dataclass
class GenerationsResult:
    generations: list[GenerationFamily]
    M: float
    epsilon: float
    scale: float
    linear_part: np.ndarray
    modulus_estimate: float
    per_generation: list[dict]
    constants: NestedConstants | None
    limit_audit: dict
    stopped: str | None = None

    @property
    def N(self) -> float:
        return self.epsilon * self.M

    @property
    def C0(self) -> float:
        return self.constants.C0 if self.constants else math.inf

    @property
    def dimension_bound(self) -> float:
        """``1 - log2(C0) / N``."""
        return 1.0 - math.log2(self.C0) / self.N if math.isfinite(self.C0) else -math.inf

    def to_json(self) -> dict:
        return {
            "M": self.M,
            "epsilon": self.epsilon,
            "N": self.N,
            "scale": self.scale,
            "linear_part": [float(x) for x in self.linear_part],
            "modulus_estimate": self.modulus_estimate,
            "generation_sizes": [len(g.cubes) for g in self.generations],
            "per_generation": self.per_generation,
            "constants": self.constants.to_json() if self.constants else None,
            "C0": self.C0,
            "dimension_bound": self.dimension_bound,
            "limit_audit": self.limit_audit,
            "stopped": self.stopped,
        }


def _segment_restrict(Q: DyadicCube):
    """Cubes whose closure meets the segment ``{a(Q) + t e_1}`` along the lower edge of ``Q``."""
    fixed = np.array(Q.coords[1:], dtype=np.int64)

    def keep(level: int, coords: np.ndarray) -> np.ndarray:
        target = fixed << (level - Q.level)
        return np.all(coords[:, 1:] == target, axis=1)

    return keep


def normalize_field(f: ScalarField, max_depth: int, samples: int = 20_000, seed: int = 0, margin: float = 1.1):
    """Rescale so the sampled modulus (times ``margin``) is at most 1, then remove ``V(unit cube)``.

    Returns ``(g, scale, linear_part, modulus)``.
    """
    w = gradient_modulus(f, 1.0, SampleSpec(count=samples, levels=(0, max_depth), seed=seed))
    scale = 1.0 / (margin * w) if margin * w > 1.0 else 1.0
    g = f * scale if scale != 1.0 else f
    Q1 = DyadicCube(0, (0,) * f.dim)
    lin = discrete_gradient(g, Q1).vector
    if np.any(lin != 0):
        g = g - linear_field(lin)
    return g, scale, lin, w


def theorem1_generations(
    f: ScalarField,
    params: StoppingParams,
    n_gens: int,
    schedule: Sequence[float] | None = None,
    normalize: bool = True,
    limit_samples: int = 200,
    seed: int = 0,
    r_budget: int | None = None,
) -> GenerationsResult:
    """Build generations ``A(1) = {unit cube}, A(2), ...`` by alternating two searches.

    In each generation cube ``Q`` the maximal cubes ``R`` with ``|V(R)| >= M_n``
    meeting the lower edge segment of ``Q`` are found; the selection step runs
    in each ``R`` with cone direction ``-V(R)/|V(R)|`` and its good cubes form
    the next generation.  Cubes left without descendants are pruned.

    ``r_budget`` caps the number of ``R`` cubes used per generation cube: the
    coarsest ones are kept (ties broken by coordinates).  The size, mass and packing
    constants are measured on whatever family results.
    """
    d = f.dim
    if normalize:
        g, scale, lin, w = normalize_field(f, params.max_depth, seed=seed)
    else:
        g, scale, lin, w = f, 1.0, np.zeros(d), math.nan
    Q1 = DyadicCube(0, (0,) * d)
    gens = [GenerationFamily(1, [Q1], {})]
    diags: list[dict] = []
    stopped = None
    for n in range(1, n_gens):
        Mn = params.M if schedule is None else float(schedule[n - 1])
        cubes, links = [], {}
        r_count = prop_count = 0
        unresolved = 0.0
        mv_C = 0.0
        for Q in gens[-1].cubes:
            Rfam = maximal_deviation_cubes(
                g, Q, Mn, params.max_depth, reference=np.zeros(d), include_root=True,
                restrict=_segment_restrict(Q), max_active=params.max_active, max_selected=r_budget,
            )
            Rs = Rfam.cubes if r_budget is None else Rfam.cubes[:r_budget]
            r_count += len(Rs)
            for R in Rs:
                if R.level >= params.max_depth:
                    continue
                res = selection_step(g, R, params, check=False)
                prop_count += 1
                unresolved = max(unresolved, res.family.unresolved_length_ratio)
                run = res.runs[0]
                mv_C = max(mv_C, run.mean_value["C"])
                for c in run.selected:
                    if c not in links:
                        cubes.append(c)
                        links[c] = Q
        pruned = _prune(gens, links)
        order = sorted(range(len(cubes)), key=lambda i: cubes[i])
        cubes = [cubes[i] for i in order]
        diags.append({
            "generation": n + 1,
            "threshold": Mn,
            "R_cubes": r_count,
            "selection_runs": prop_count,
            "cubes": len(cubes),
            "pruned_parents": pruned,
            "max_unresolved_ratio": unresolved,
            "max_mean_value_C": mv_C,
        })
        if not cubes:
            stopped = f"generation {n + 1} is empty"
            break
        gens.append(GenerationFamily(n + 1, cubes, links))
    constants = nested_constants(gens, 1.0) if len(gens) > 1 else None
    audit = _limit_audit(g, gens, 2 * params.M + 1, limit_samples, seed)
    return GenerationsResult(gens, params.M, params.epsilon, scale, lin, w, diags, constants, audit, stopped)


def _prune(gens: list[GenerationFamily], links: dict) -> int:
    """Drop cubes without descendants from earlier generations; returns the count removed."""
    if not links:
        return 0
    alive = set(links.values())
    removed = 0
    for g in reversed(gens):
        keep = [c for c in g.cubes if c in alive]
        removed += len(g.cubes) - len(keep)
        g.cubes = keep
        g.parent_links = {c: g.parent_links[c] for c in keep if c in g.parent_links}
        alive = set(g.parent_links.values())
    return removed


def _limit_audit(g: ScalarField, gens: list[GenerationFamily], bound: float, samples: int, seed: int) -> dict:
    """Sample points in the deepest generation and scan ``|V(Q_n(x))|`` down to that depth."""
    deep = gens[-1].cubes
    rng = np.random.default_rng(seed)
    if not deep or len(gens) < 2:
        return {"samples": 0, "bound": bound, "max_sup": None, "violations": 0}
    pick = rng.integers(0, len(deep), size=samples)
    worst, violations = 0.0, 0
    levels = np.array([deep[i].level for i in pick])
    pts = np.array([deep[i].origin + rng.random(g.dim) * deep[i].side for i in pick])
    for L in np.unique(levels):
        sel = levels == L
        V, _ = trajectories(g, pts[sel], int(min(L, 40)))
        sup = np.linalg.norm(V, axis=2).max(axis=1)
        worst = max(worst, float(sup.max()))
        violations += int(np.sum(sup > bound))
    return {"samples": samples, "bound": bound, "max_sup": worst, "violations": violations}
