"""Whitney decomposition, partition of unity and the extension operator for finite E."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .calculus import (
    Box,
    JetOracle,
    TensorBumpOracle,
    ZeroOracle,
    bump_table,
    reciprocal_series,
)
from .exceptions import DataError, NotFlatError, NumericalError
from .jets import Jet, Smoothness, WhitneyField, index_table
from .norms import gamma_bound, lengthscale_constant

__all__ = [
    "DyadicCube",
    "WhitneyDecomposition",
    "PartitionOfUnity",
    "LocalExtension",
    "Extension",
    "whitney_decompose",
    "build_pou",
    "single_jet_extend",
    "whitney_extend",
    "extension_jet",
]

DEFAULT_MAX_LEVEL = 40
TOUCH_SLACK = 1e-12
POU_DILATION = 1.1


@dataclass(frozen=True, order=True)
class DyadicCube:
    """The half-open cube ``prod_j [z_j 2^-k, (z_j + 1) 2^-k)``."""

    level: int
    anchor: tuple[int, ...]

    @property
    def side(self) -> float:
        return 2.0**-self.level

    @property
    def n(self) -> int:
        return len(self.anchor)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.anchor, dtype=float) * self.side

    @property
    def center(self) -> np.ndarray:
        return (np.array(self.anchor, dtype=float) + 0.5) * self.side

    def dilate(self, factor: float) -> Box:
        """Closed box ``factor * Q`` with the same center."""
        half = 0.5 * factor * self.side
        c = self.center
        return Box(tuple(c - half), tuple(c + half))

    @property
    def parent(self) -> "DyadicCube":
        return DyadicCube(self.level - 1, tuple(z // 2 for z in self.anchor))

    def children(self) -> list["DyadicCube"]:
        return [
            DyadicCube(self.level + 1, tuple(2 * z + b for z, b in zip(self.anchor, bits)))
            for bits in itertools.product((0, 1), repeat=self.n)
        ]

    def contains(self, x: Sequence[float]) -> bool:
        k = np.floor(np.asarray(x, dtype=float) * 2.0**self.level).astype(np.int64)
        return tuple(int(v) for v in k) == self.anchor


def _points_in(box: Box, X: np.ndarray) -> np.ndarray:
    return np.flatnonzero(box.contains(X)) if X.size else np.zeros(0, dtype=int)


def _pick(X: np.ndarray, idx: np.ndarray, center: np.ndarray) -> int:
    """Point of ``X[idx]`` nearest ``center``; ties broken lexicographically."""
    return int(min(idx, key=lambda i: (float(np.linalg.norm(X[i] - center)), tuple(X[i]))))


class WhitneyDecomposition:
    """Finite family of dyadic cubes with representatives ``x_Q`` (indices into ``E``)."""

    def __init__(self, points: np.ndarray, cubes: list[DyadicCube], reps: list[int | None],
                 region: Box, bound_box: Box):
        self.points = points
        self.cubes = cubes
        self.reps = reps
        self.region = region
        self.bound_box = bound_box
        self.n = points.shape[1]
        self.levels = np.array([q.level for q in cubes], dtype=int)
        self.centers = np.array([q.center for q in cubes]).reshape(len(cubes), self.n)
        self.sides = 2.0 ** -self.levels.astype(float)

    def __len__(self) -> int:
        return len(self.cubes)

    @cached_property
    def neighbors(self) -> dict[int, list[int]]:
        """Touching cubes (closed boxes intersect), by index."""
        lo = self.centers - 0.5 * self.sides[:, None]
        hi = self.centers + 0.5 * self.sides[:, None]
        out: dict[int, list[int]] = {}
        chunk = 512
        for start in range(0, len(self.cubes), chunk):
            sl = slice(start, start + chunk)
            touch = np.all(
                (lo[sl, None, :] <= hi[None, :, :] + TOUCH_SLACK)
                & (lo[None, :, :] <= hi[sl, None, :] + TOUCH_SLACK),
                axis=2,
            )
            for i, row in enumerate(touch, start=start):
                out[i] = [int(j) for j in np.flatnonzero(row) if j != i]
        return out

    def neighbor_ratios(self) -> set[float]:
        ratios = set()
        for i, js in self.neighbors.items():
            for j in js:
                ratios.add(float(self.sides[j] / self.sides[i]))
        return ratios

    def to_list(self) -> list[dict]:
        return [
            {
                "level": q.level,
                "anchor": list(q.anchor),
                "rep": None if r is None else [float(v) for v in self.points[r]],
            }
            for q, r in zip(self.cubes, self.reps)
        ]


def whitney_decompose(E, bound_box: Box | None = None, pad: float = 3.0,
                      max_level: int = DEFAULT_MAX_LEVEL) -> WhitneyDecomposition:
    """Refine unit lattice cubes until every tripled cube meets at most one point of ``E``.

    Level-0 cubes meeting ``bound_box`` inflated by ``pad`` are the roots.
    A cube ``Q`` is kept when ``#(E & 3Q) <= 1`` and otherwise replaced by
    its children; hitting ``max_level`` raises :class:`NumericalError`.
    """
    X = np.asarray(E, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.shape[0] == 0:
        raise DataError("E is empty")
    if not np.all(np.isfinite(X)):
        raise DataError("E contains non-finite coordinates")
    if len({tuple(p) for p in X}) != X.shape[0]:
        raise DataError("duplicate points in E")
    n = X.shape[1]
    if bound_box is None:
        bound_box = Box(tuple(X.min(0) - 1.0), tuple(X.max(0) + 1.0))
    if bound_box.n != n:
        raise DataError("bound_box dimension differs from the dimension of E")
    inside = np.all((X > np.array(bound_box.lo)) & (X < np.array(bound_box.hi)), axis=1)
    if not np.all(inside):
        raise DataError(f"point {tuple(X[~inside][0])} is not interior to bound_box")
    region = bound_box.inflate(pad)
    if max(abs(v) for v in region.lo + region.hi) * 2.0**max_level > 2.0**62:
        raise DataError("bound_box too large for the requested refinement depth")

    ranges = [range(math.floor(a), math.floor(b) + 1) for a, b in zip(region.lo, region.hi)]
    stack = [(DyadicCube(0, tuple(z)), np.arange(X.shape[0])) for z in itertools.product(*ranges)]
    stack.reverse()
    cubes: list[DyadicCube] = []
    reps: list[int | None] = []
    while stack:
        q, cand = stack.pop()
        inside = cand[_points_in(q.dilate(3.0), X[cand])]
        if inside.size <= 1:
            cubes.append(q)
            if inside.size == 1:
                reps.append(int(inside[0]))
            elif q.level >= 1:
                near = cand[_points_in(q.parent.dilate(3.0), X[cand])]
                reps.append(_pick(X, near, q.center))
            else:
                reps.append(None)
            continue
        if q.level >= max_level:
            raise NumericalError(
                f"refinement limit: level {max_level} reached near {tuple(X[inside[0]])}"
            )
        # 3Q and 3Q+ of every child lie inside 3Q
        for child in reversed(q.children()):
            stack.append((child, inside))
    order = sorted(range(len(cubes)), key=lambda i: (cubes[i].level, cubes[i].anchor))
    return WhitneyDecomposition(
        X, [cubes[i] for i in order], [reps[i] for i in order], region, bound_box
    )


# ---------------------------------------------------------------------------
# partition of unity


class _LevelLookup:
    """Vectorised lookup of cube indices by (level, anchor)."""

    def __init__(self, decomposition: WhitneyDecomposition):
        self.n = decomposition.n
        self.tables = {}
        for level in np.unique(decomposition.levels):
            idx = np.flatnonzero(decomposition.levels == level)
            anchors = np.array([decomposition.cubes[i].anchor for i in idx], dtype=np.int64)
            zmin = anchors.min(0) - 1
            extent = anchors.max(0) - zmin + 2
            if math.prod(int(e) for e in extent) < 2**62:
                strides = np.cumprod(np.concatenate([[1], extent[:-1]])).astype(np.int64)
                keys = (anchors - zmin) @ strides
                order = np.argsort(keys)
                self.tables[int(level)] = ("array", zmin, extent, strides, keys[order], idx[order])
            else:
                mapping = {tuple(int(v) for v in a): int(i) for a, i in zip(anchors, idx)}
                self.tables[int(level)] = ("dict", mapping)

    def find(self, z: np.ndarray, level: int) -> np.ndarray:
        """Cube index for each anchor row of ``z`` at ``level``, or -1."""
        entry = self.tables[level]
        if entry[0] == "dict":
            return np.array([entry[1].get(tuple(int(v) for v in row), -1) for row in z], dtype=int)
        _, zmin, extent, strides, keys, idx = entry
        rel = z - zmin
        ok = np.all((rel >= 0) & (rel < extent), axis=1)
        out = np.full(z.shape[0], -1, dtype=int)
        if np.any(ok):
            q = rel[ok] @ strides
            pos = np.clip(np.searchsorted(keys, q), 0, keys.size - 1)
            hit = keys[pos] == q
            sub = np.full(q.size, -1, dtype=int)
            sub[hit] = idx[pos[hit]]
            out[ok] = sub
        return out


class PartitionOfUnity:
    """``theta_Q = phi_Q / sum_Q' phi_Q'`` with ``phi_Q`` the bump adapted to ``1.1 Q``."""

    def __init__(self, decomposition: WhitneyDecomposition):
        self.decomposition = decomposition
        self.n = decomposition.n
        self.radii = 0.5 * POU_DILATION * decomposition.sides
        self._lookup = _LevelLookup(decomposition)
        self._offsets = np.array(list(itertools.product((-1, 0, 1), repeat=self.n)), dtype=np.int64)

    def _covered(self, X: np.ndarray) -> None:
        ok = self.decomposition.region.contains(X)
        if not np.all(ok):
            raise DataError(f"point {tuple(X[~ok][0])} is not covered by the decomposition")

    def active(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pairs ``(point index, cube index)`` with the point inside the open ``1.1 Q``."""
        X = np.asarray(X, dtype=float).reshape(-1, self.n)
        self._covered(X)
        pts, cubes = [], []
        margin = 0.5 * (POU_DILATION - 1.0) + 1e-9
        for level in self._lookup.tables:
            scaled = X * 2.0**level
            z = np.floor(scaled).astype(np.int64)
            frac = scaled - z
            # 1.1Q reaches only a thin layer of the neighbouring lattice cells
            allowed = {-1: frac < margin, 0: np.ones_like(frac, dtype=bool), 1: frac > 1 - margin}
            for off in self._offsets:
                ok = np.all([allowed[int(o)][:, j] for j, o in enumerate(off)], axis=0)
                cand = np.flatnonzero(ok)
                if cand.size == 0:
                    continue
                found = np.full(X.shape[0], -1, dtype=int)
                found[cand] = self._lookup.find(z[cand] + off, level)
                hit = np.flatnonzero(found >= 0)
                if hit.size == 0:
                    continue
                q = found[hit]
                d = np.abs(X[hit] - self.decomposition.centers[q])
                inside = np.all(d < self.radii[q, None], axis=1)
                pts.append(hit[inside])
                cubes.append(q[inside])
        if not pts:
            return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
        p, q = np.concatenate(pts), np.concatenate(cubes)
        order = np.lexsort((q, p))
        return p[order], q[order]

    def support_count(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.n)
        p, _ = self.active(X)
        return np.bincount(p, minlength=X.shape[0])

    def bump_derivatives(self, X: np.ndarray, p: np.ndarray, q: np.ndarray, order: int) -> np.ndarray:
        """Derivatives of ``phi_Q`` at ``X[p]`` for each active pair."""
        table = index_table(self.n, order)
        r = self.radii[q]
        t = (X[p] - self.decomposition.centers[q]) / r[:, None]
        per_axis = bump_table(t, order) * (1.0 / r[:, None, None]) ** np.arange(order + 1)
        out = np.ones((p.size, table.size))
        for j in range(self.n):
            out *= per_axis[:, j, table.exponents[:, j]]
        return out

    def denominator(self, X: np.ndarray, order: int, pairs=None, phi=None) -> np.ndarray:
        """Normalised Taylor coefficients of ``sum_Q phi_Q`` at each point."""
        X = np.asarray(X, dtype=float).reshape(-1, self.n)
        table = index_table(self.n, order)
        p, q = self.active(X) if pairs is None else pairs
        if phi is None:
            phi = self.bump_derivatives(X, p, q, order)
        S = np.zeros((X.shape[0], table.size))
        np.add.at(S, p, table.to_normalised(phi))
        if np.any(S[:, 0] <= 0):
            bad = X[S[:, 0] <= 0][0]
            raise DataError(f"point {tuple(bad)} is not covered by any 1.1Q")
        return S

    def theta(self, cube: int) -> JetOracle:
        return _ThetaOracle(self, cube)

    def sum(self, X: np.ndarray) -> np.ndarray:
        """``sum_Q theta_Q`` at each point (1 up to rounding)."""
        X = np.asarray(X, dtype=float).reshape(-1, self.n)
        p, q = self.active(X)
        phi = self.bump_derivatives(X, p, q, 0)[:, 0]
        S = np.bincount(p, weights=phi, minlength=X.shape[0])
        if np.any(S <= 0):
            raise DataError("point not covered by any 1.1Q")
        return np.bincount(p, weights=phi / S[p], minlength=X.shape[0])


class _ThetaOracle(JetOracle):
    def __init__(self, pou: PartitionOfUnity, cube: int):
        self.pou, self.cube, self.n = pou, cube, pou.n
        self.domain = pou.decomposition.region

    def derivatives(self, X, order):
        X = self._check(X)
        table = index_table(self.n, order)
        p, q = self.pou.active(X)
        phi = self.pou.bump_derivatives(X, p, q, order)
        S = self.pou.denominator(X, order, (p, q), phi)
        mine = np.zeros((X.shape[0], table.size))
        sel = q == self.cube
        mine[p[sel]] = table.to_normalised(phi[sel])
        return table.to_derivatives(table.mul(mine, reciprocal_series(S, table)))


def build_pou(decomposition: WhitneyDecomposition) -> PartitionOfUnity:
    return PartitionOfUnity(decomposition)


# ---------------------------------------------------------------------------
# single-jet extension


class LocalExtension(JetOracle):
    """``x -> psi((x - x0) / rho) * P(x)`` with ``psi`` a tensor plateau cutoff.

    ``psi`` equals 1 on the cube of half-width ``rho / 2``, so the jet of the
    result at ``x0`` is ``P`` exactly.
    """

    def __init__(self, P: Jet, radius: float, M: float):
        self.P = P
        self.n = P.n
        self.radius = float(radius)
        self.M = float(M)
        self.domain = Box.whole(self.n)
        self._table = index_table(P.n, P.degree)
        self._coeffs = self._table.to_normalised(P.to_array())
        self._cutoff = TensorBumpOracle(P.basepoint, self.radius, "plateau")

    @property
    def support(self) -> Box:
        return self._cutoff.support

    def normalised(self, X: np.ndarray, order: int) -> np.ndarray:
        table = index_table(self.n, order)
        psi = table.to_normalised(self._cutoff.derivatives(X, order))
        poly = np.zeros((X.shape[0], table.size))
        k = min(order, self.P.degree)
        size = math.comb(self.n + k, self.n)
        shifted = self._table.shift(self._coeffs, X - np.asarray(self.P.basepoint))
        poly[:, :size] = shifted[:, :size]
        return table.mul(psi, poly)

    def derivatives(self, X, order):
        X = self._check(X)
        return index_table(self.n, order).to_derivatives(self.normalised(X, order))


def single_jet_extend(P: Jet, s: Smoothness | float, eps: float = 0.5) -> JetOracle:
    """Nonnegative compactly supported function whose jet at the basepoint is ``P``.

    ``M`` is the least bound with ``P`` in ``Gamma(x0, M)``; the cutoff radius
    is ``c0 * (P(x0)/M)^(1/s) / sqrt(n)`` so that the support cube sits inside
    the ball on which ``P`` stays within a factor ``eps`` of ``P(x0)``.
    """
    s = Smoothness.of(s)
    if P.degree != s.floor_s:
        raise DataError(f"jet degree {P.degree} differs from floor(s) = {s.floor_s}")
    if P.is_zero():
        return ZeroOracle(P.n)
    M = gamma_bound(P, s)
    if P.value < 0:
        raise DataError(f"negative value at {P.basepoint}")
    if math.isinf(M):
        raise NotFlatError(f"jet at {P.basepoint} is not flat (zero value, nonzero derivatives)")
    delta = min((P.value / M) ** (1.0 / s.s), 1.0)
    radius = lengthscale_constant(P.n, s.s, float(eps)) * delta / math.sqrt(P.n)
    return LocalExtension(P, radius, M)


# ---------------------------------------------------------------------------
# the extension operator


class Extension(JetOracle):
    """``F = sum_Q theta_Q * T_{x_Q}[P_{x_Q}]`` over a finite Whitney decomposition."""

    def __init__(self, field: WhitneyField, s: Smoothness, pou: PartitionOfUnity,
                 locals_: list[JetOracle]):
        self.field = field
        self.s = s
        self.pou = pou
        self.decomposition = pou.decomposition
        self.locals = locals_
        self.n = field.n
        self.domain = self.decomposition.region
        self._rep = np.array([-1 if r is None else r for r in self.decomposition.reps], dtype=int)

    @property
    def support(self) -> Box:
        """A box containing the support of ``F``."""
        boxes = [loc.support for loc in self.locals if isinstance(loc, LocalExtension)]
        if not boxes:
            c = self.field.points[0]
            return Box(tuple(c), tuple(c))
        lo = np.min([b.lo for b in boxes], axis=0)
        hi = np.max([b.hi for b in boxes], axis=0)
        return Box(tuple(lo), tuple(hi))

    def feature_boxes(self, margin: float = 0.05) -> list[Box]:
        """Boxes covering every place where ``F`` has structure.

        ``F`` vanishes outside the supports of the local extensions, and it
        equals a single local extension wherever all active cubes share one
        representative. The boxes are those supports (slightly enlarged)
        plus ``1.1Q`` for each cube that meets a support and touches a cube
        with a different representative, so blending is sampled at the
        scale of the cube.
        """
        supports = {
            e: loc.support.inflate(margin * loc.radius)
            for e, loc in enumerate(self.locals)
            if isinstance(loc, LocalExtension)
        }
        if not supports:
            c = self.field.points[0]
            return [Box(tuple(c - 0.5), tuple(c + 0.5))]
        boxes = list(supports.values())
        d = self.decomposition
        for i, q in enumerate(d.cubes):
            reps = {d.reps[j] for j in d.neighbors[i]} | {d.reps[i]}
            if len(reps) < 2:
                continue
            cube = q.dilate(POU_DILATION)
            lo, hi = np.array(cube.lo), np.array(cube.hi)
            if any(
                np.all(lo < np.array(b.hi)) and np.all(hi > np.array(b.lo))
                for e, b in supports.items()
                if e in reps
            ):
                boxes.append(cube)
        return boxes

    def derivatives(self, X, order):
        X = self._check(X)
        table = index_table(self.n, order)
        p, q = self.pou.active(X)
        phi = self.pou.bump_derivatives(X, p, q, order)
        S = self.pou.denominator(X, order, (p, q), phi)
        N = np.zeros_like(S)
        rep = self._rep[q]
        for e, local in enumerate(self.locals):
            if not isinstance(local, LocalExtension):
                continue
            sel = np.flatnonzero(rep == e)
            if sel.size == 0:
                continue
            # skip pairs outside the local support, where F_Q vanishes identically
            lo, hi = np.array(local.support.lo), np.array(local.support.hi)
            pts = X[p[sel]]
            sel = sel[np.all((pts > lo) & (pts < hi), axis=1)]
            if sel.size == 0:
                continue
            prod = table.mul(table.to_normalised(phi[sel]), local.normalised(X[p[sel]], order))
            np.add.at(N, p[sel], prod)
        out = table.mul(N, reciprocal_series(S, table))
        return table.to_derivatives(out)


def whitney_extend(field: WhitneyField, s: Smoothness | float, bound_box: Box | None = None,
                   eps: float = 0.5, pad: float = 3.0,
                   max_level: int = DEFAULT_MAX_LEVEL) -> Extension:
    """Extend a nonnegative flat Whitney field to a nonnegative function on the covered region."""
    s = Smoothness.of(s)
    if field.degree != s.floor_s:
        raise DataError(f"jet degree {field.degree} differs from floor(s) = {s.floor_s}")
    for P in field.jets:
        if P.value < 0:
            raise DataError(f"not a nonnegative field: value {P.value} at {P.basepoint}")
        if math.isinf(gamma_bound(P, s)):
            raise NotFlatError(
                f"infinite field norm: jet at {P.basepoint} has zero value and nonzero derivatives"
            )
    decomposition = whitney_decompose(field.points, bound_box, pad=pad, max_level=max_level)
    locals_ = [single_jet_extend(P, s, eps) for P in field.jets]
    return Extension(field, s, build_pou(decomposition), locals_)


def extension_jet(F: JetOracle, x: Sequence[float], order: int | None = None) -> Jet:
    """Jet of ``F`` at ``x`` of the given order (default ``floor(s)`` for extensions)."""
    if order is None:
        order = F.s.floor_s if isinstance(F, Extension) else 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if F.domain is not None and not F.domain.contains(x)[0]:
        raise DataError(f"point {tuple(x)} is not covered by the decomposition")
    return F.jet(x, order)
