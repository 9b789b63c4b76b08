"""Exact Whitney-field norms and sampled norm estimates for jet oracles.

Notation follows the usual conventions for flat functions: for ``s > 0``,
``|nabla^m F(x)|`` is the Euclidean norm of the vector of all order-``m``
partials (no multinomial weights), and the flat ratio at order ``m`` is
``(|nabla^m F(x)|^s / F(x)^(s-m))^(1/m)`` with ``0/0 = 0`` and ``a/0 = inf``.
"""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .calculus import Box, JetOracle
from .exceptions import DataError
from .jets import Jet, Smoothness, WhitneyField, grad_norm, index_table, jet_recenter

__all__ = [
    "NormReport",
    "GammaSpec",
    "flat_ratio",
    "jet_flat_ratio",
    "gamma_bound",
    "gamma_member",
    "whitney_field_cs_norm",
    "whitney_field_flat_norm",
    "whitney_field_norm",
    "lengthscale_constant",
    "flat_lengthscale",
    "evaluate_derivatives",
    "sampled_norms",
    "prop_c2_bound_check",
]


def _fmt(x: float):
    return "inf" if math.isinf(x) else x


@dataclass(frozen=True)
class NormReport:
    """Sampled lower bounds for the C^s, homogeneous C^s and flat seminorms."""

    sup_derivs: float
    holder: float
    flat: float
    sample_count: int
    pair_count: int
    grid: int | None = None

    @property
    def cs(self) -> float:
        return self.sup_derivs + self.holder

    @property
    def fs(self) -> float:
        return self.cs + self.flat

    def to_dict(self) -> dict:
        return {
            "sup_derivs": _fmt(self.sup_derivs),
            "holder": _fmt(self.holder),
            "flat": _fmt(self.flat),
            "cs": _fmt(self.cs),
            "fs": _fmt(self.fs),
            "samples": self.sample_count,
            "pairs": self.pair_count,
        }


@dataclass(frozen=True)
class GammaSpec:
    x0: tuple[float, ...]
    M: float

    def __post_init__(self):
        if not self.M >= 0:
            raise DataError(f"Gamma bound must be >= 0, got {self.M}")
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))


# ---------------------------------------------------------------------------
# pointwise quantities


def flat_ratio(grad: np.ndarray, value: np.ndarray, s: float, m: int) -> np.ndarray:
    """Vectorised ``(grad^s / value^(s-m))^(1/m)`` with the 0/0 and a/0 conventions."""
    grad = np.abs(np.asarray(grad, dtype=float))
    value = np.asarray(value, dtype=float)
    out = np.zeros(np.broadcast_shapes(grad.shape, value.shape))
    grad, value = np.broadcast_to(grad, out.shape), np.broadcast_to(value, out.shape)
    nz = grad > 0
    pos = nz & (value > 0)
    out[nz & ~(value > 0)] = math.inf
    with np.errstate(over="ignore", divide="ignore"):
        out[pos] = np.exp((s * np.log(grad[pos]) - (s - m) * np.log(value[pos])) / m)
    return out


def jet_flat_ratio(P: Jet, s: Smoothness | float) -> float:
    """``max_{1 <= m < s}`` of the flat ratio of ``P`` at its basepoint."""
    s = Smoothness.of(s)
    if P.value < 0:
        raise DataError("flat ratio of a jet with negative value")
    best = 0.0
    for m in range(1, min(s.floor_s, P.degree) + 1):
        best = max(best, float(flat_ratio(grad_norm(P, m), P.value, s.s, m)))
    return best


def gamma_bound(P: Jet, s: Smoothness | float) -> float:
    """Smallest ``M`` with ``P`` in ``Gamma(x0, M)``; ``inf`` if none exists."""
    s = Smoothness.of(s)
    if P.value < 0:
        return math.inf
    sup = max(grad_norm(P, m) for m in range(0, min(s.floor_s, P.degree) + 1))
    return max(sup, jet_flat_ratio(P, s))


def gamma_member(P: Jet, spec: GammaSpec, s: Smoothness | float) -> bool:
    """Membership in ``Gamma(x0, M)``: nonnegative value, derivatives and flat ratios <= M."""
    if P.basepoint != spec.x0:
        raise DataError("jet basepoint differs from the Gamma basepoint")
    return gamma_bound(P, s) <= spec.M


# ---------------------------------------------------------------------------
# Whitney-field norms


def _field_arrays(field: WhitneyField):
    pts = field.points
    if len({tuple(p) for p in pts}) != len(pts):
        raise DataError("duplicate points in E")
    return pts, field.jets


def whitney_field_cs_norm(field: WhitneyField, s: Smoothness | float, parts: bool = False):
    """Exact C^s norm of a Whitney field: pointwise sup plus the pair quotients.

    With ``parts=True`` returns ``(sup_term, pair_term)``.
    """
    s = Smoothness.of(s)
    pts, jets = _field_arrays(field)
    orders = range(0, min(s.floor_s, field.degree) + 1)
    sup_term = max(grad_norm(P, m) for P in jets for m in orders)
    pair_term = 0.0
    for i, j in itertools.permutations(range(len(jets)), 2):
        y = pts[j]
        dist = float(np.linalg.norm(pts[i] - y))
        diff = jet_recenter(jets[i], y) - jets[j]
        for m in orders:
            pair_term = max(pair_term, grad_norm(diff, m) / dist ** (s.s - m))
    return (sup_term, pair_term) if parts else sup_term + pair_term


def whitney_field_flat_norm(field: WhitneyField, s: Smoothness | float) -> float:
    """Flat seminorm of a Whitney field (0 when ``s <= 1``)."""
    s = Smoothness.of(s)
    _field_arrays(field)
    for P in field.jets:
        if P.value < 0:
            raise DataError("not a nonnegative field")
    if s.s <= 1:
        return 0.0
    return max(jet_flat_ratio(P, s) for P in field.jets)


def whitney_field_norm(field: WhitneyField, s: Smoothness | float) -> float:
    """``cs_norm + flat_norm``."""
    return whitney_field_cs_norm(field, s) + whitney_field_flat_norm(field, s)


# ---------------------------------------------------------------------------
# flat lengthscale


@lru_cache(maxsize=None)
def lengthscale_constant(n: int, s: float, eps: float) -> float:
    """Largest ``c <= 1`` with ``C(n+k, n) * sum_{1<=j<=k} n^(j/2) c^j / j! <= eps``,
    ``k = floor(s)``; found by bisection."""
    if eps <= 0:
        raise DataError(f"epsilon must be positive, got {eps}")
    k = Smoothness(s).floor_s
    comb = math.comb(n + k, n)

    def lhs(c):
        return comb * sum(n ** (j / 2) * c**j / math.factorial(j) for j in range(1, k + 1))

    if lhs(1.0) <= eps:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if lhs(mid) <= eps:
            lo = mid
        else:
            hi = mid
    return lo


def flat_lengthscale(P: Jet, s: Smoothness | float, eps: float = 0.5) -> float:
    """Radius around the basepoint within which ``P`` is locally constant up to ``eps``.

    Returns ``c0 * (P(x0)/M)^(1/s)`` with ``M`` the largest flat ratio of ``P``;
    ``inf`` when ``M = 0 < P(x0)`` and ``0`` when ``P(x0) = 0``.
    """
    s = Smoothness.of(s)
    if eps <= 0:
        raise DataError(f"epsilon must be positive, got {eps}")
    value = P.value
    if value < 0:
        raise DataError("flat lengthscale of a jet with negative value")
    if value == 0:
        return 0.0
    M = jet_flat_ratio(P, s)
    if M == 0:
        return math.inf
    return lengthscale_constant(P.n, s.s, float(eps)) * (value / M) ** (1.0 / s.s)


# ---------------------------------------------------------------------------
# sampled norms


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("FLATJET_THREADS", "1")))
    except ValueError:
        return 1


def evaluate_derivatives(F: JetOracle, X: np.ndarray, order: int, chunk: int = 8192) -> np.ndarray:
    """``F.derivatives`` over many points in chunks, threaded up to ``FLATJET_THREADS``."""
    X = np.asarray(X, dtype=float).reshape(-1, F.n)
    if X.shape[0] <= chunk:
        return F.derivatives(X, order)
    pieces = [X[i : i + chunk] for i in range(0, X.shape[0], chunk)]
    workers = _threads()
    if workers == 1:
        return np.concatenate([F.derivatives(p, order) for p in pieces])
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.concatenate(list(pool.map(lambda p: F.derivatives(p, order), pieces)))


def _order_norms(D: np.ndarray, n: int, order: int) -> np.ndarray:
    table = index_table(n, order)
    return np.stack(
        [np.linalg.norm(D[:, table.slice_order(m)], axis=1) for m in range(order + 1)], axis=1
    )


# zoomed pairs closer than this fraction of the grid spacing are ignored
MIN_PAIR_FRACTION = 1e-6


def _offsets(n: int, resolution: int) -> list[tuple[int, ...]]:
    """Grid offsets along axes and diagonals at dyadic scales."""
    directions = [tuple(v) for v in itertools.product((-1, 0, 1), repeat=n)]
    directions = [d for d in directions if any(d) and next(c for c in d if c) > 0]
    out = []
    scale = 1
    while scale < resolution:
        out.extend(tuple(scale * c for c in d) for d in directions)
        scale *= 2
    return out


def _holder_on_grid(top: np.ndarray, resolution: int, n: int, spacing: np.ndarray,
                    sigma: float, max_pairs: int, seeds: int):
    """Best Hoelder quotient over offset pairs, pair count, and the best pairs found."""
    shape = (resolution,) * n
    flat_index = np.arange(top.shape[0]).reshape(shape)
    offsets = _offsets(n, resolution)
    per_offset = max(1, max_pairs // max(1, len(offsets)))
    best, count = 0.0, 0
    candidates: list[tuple[float, int, int]] = []
    for off in offsets:
        src = tuple(slice(max(0, -o), resolution - max(0, o)) for o in off)
        dst = tuple(slice(max(0, o), resolution + min(0, o)) for o in off)
        ia, ib = flat_index[src].ravel(), flat_index[dst].ravel()
        if ia.size == 0:
            continue
        if ia.size > per_offset:
            step = int(math.ceil(ia.size / per_offset))
            ia, ib = ia[::step], ib[::step]
        dist = float(np.linalg.norm(np.asarray(off) * spacing))
        if dist == 0:
            continue
        quot = np.linalg.norm(top[ia] - top[ib], axis=1) / dist**sigma
        count += ia.size
        j = int(np.argmax(quot))
        best = max(best, float(quot[j]))
        candidates.append((float(quot[j]), int(ia[j]), int(ib[j])))
    candidates.sort(reverse=True)
    return best, count, [(i, j) for _, i, j in candidates[:seeds]]


def _zoom_batch(objective, centers: np.ndarray, widths: np.ndarray, lo: np.ndarray,
                hi: np.ndarray, rounds: int, points: int = 9) -> tuple[np.ndarray, np.ndarray, int]:
    """Maximise ``objective`` near each row of ``centers`` by shrinking small grids.

    All seeds are evaluated in one call per round. ``lo``/``hi`` are per-seed
    bounds. Returns the best values, their locations and the evaluation count.
    """
    S, n = centers.shape
    best_x = centers.copy()
    best_v = objective(best_x, np.arange(S))
    evals = S
    unit = np.stack(
        [m.ravel() for m in np.meshgrid(*[np.linspace(-1, 1, points)] * n, indexing="ij")], axis=-1
    )
    widths = widths.copy()
    for _ in range(rounds):
        mesh = best_x[:, None, :] + unit[None, :, :] * widths[:, None, :]
        mesh = np.clip(mesh, lo[:, None, :], hi[:, None, :]).reshape(-1, n)
        owner = np.repeat(np.arange(S), unit.shape[0])
        vals = objective(mesh, owner).reshape(S, -1)
        evals += mesh.shape[0]
        j = np.argmax(vals, axis=1)
        v = vals[np.arange(S), j]
        better = v > best_v
        best_v = np.where(better, v, best_v)
        best_x[better] = mesh.reshape(S, -1, n)[better, j[better]]
        widths = widths / 4.0
    return best_v, best_x, evals


class _Sampler:
    """Grid sampling over boxes followed by batched zoom refinement."""

    def __init__(self, F: JetOracle, s: Smoothness, nonneg_tol: float):
        self.F, self.s, self.n, self.k = F, s, F.n, s.floor_s
        self.nonneg_tol = nonneg_tol
        self.top_slice = index_table(F.n, s.floor_s).slice_order(s.floor_s)

    def pointwise(self, X: np.ndarray):
        D = evaluate_derivatives(self.F, X, self.k)
        norms = _order_norms(D, self.n, self.k)
        values = D[:, 0]
        scale = max(1.0, float(np.max(np.abs(values))))
        if np.any(values < -self.nonneg_tol * scale):
            raise DataError(f"oracle takes negative values (min {values.min():.3e})")
        values = np.maximum(values, 0.0)
        flat = np.zeros(X.shape[0])
        for m in range(1, self.k + 1):
            flat = np.maximum(flat, flat_ratio(norms[:, m], values, self.s.s, m))
        return D, norms.max(axis=1), flat

    def top(self, X: np.ndarray) -> np.ndarray:
        return evaluate_derivatives(self.F, X, self.k)[:, self.top_slice]

    def quotient(self, Z: np.ndarray, other: np.ndarray, t_other: np.ndarray,
                 min_dist: np.ndarray) -> np.ndarray:
        # pairs a few ulps apart measure rounding, not the function
        d = np.linalg.norm(Z - other, axis=1)
        tz = self.top(Z)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.linalg.norm(tz - t_other, axis=1) / d**self.s.sigma
        return np.where(d >= min_dist, q, 0.0)


def sampled_norms(F: JetOracle, box: Box | Sequence[Box], grid: int, s: Smoothness | float,
                  max_pairs: int = 4_000_000, nonneg_tol: float = 1e-12,
                  refine: int = 6, seeds: int = 8) -> NormReport:
    """Grid estimates (lower bounds) of the C^s, homogeneous C^s and flat seminorms.

    Derivatives are sampled on ``grid`` points per axis of ``box``. The
    Hoelder quotient of the top-order derivatives is maximised over pairs of
    grid points separated by axis and diagonal offsets at dyadic scales.
    With ``refine > 0`` the best ``seeds`` grid candidates of each component
    are then improved by ``refine`` rounds of local zooming; every reported
    value is still attained at actual sample points, so the report stays a
    lower bound. Several boxes may be passed; the maxima are taken jointly.
    """
    s = Smoothness.of(s)
    boxes = [box] if isinstance(box, Box) else list(box)
    if not boxes:
        raise DataError("no sampling box given")
    sampler = _Sampler(F, s, nonneg_tol)
    sup_derivs = holder = flat = 0.0
    samples = pairs = 0
    point_seeds = {1: [], 2: []}
    pair_seeds = []
    for b in boxes:
        if any(math.isinf(v) for v in b.lo + b.hi):
            raise DataError("sampling box must be bounded")
        if b.n != F.n:
            raise DataError("box dimension differs from the oracle dimension")
        lo, hi = np.array(b.lo), np.array(b.hi)
        X = b.grid(grid)
        D, sup_vals, flat_vals = sampler.pointwise(X)
        spacing = (hi - lo) / (grid - 1)
        h, c, best_pairs = _holder_on_grid(D[:, sampler.top_slice], grid, F.n, spacing,
                                           s.sigma, max_pairs, seeds if refine else 0)
        sup_derivs = max(sup_derivs, float(sup_vals.max()))
        flat = max(flat, float(flat_vals.max()))
        holder = max(holder, h)
        samples += X.shape[0]
        pairs += c
        if not refine:
            continue
        for which, vals in ((1, sup_vals), (2, flat_vals)):
            finite = np.where(np.isfinite(vals), vals, -1.0)
            for j in np.argsort(finite)[::-1][:seeds]:
                if finite[j] > 0:
                    point_seeds[which].append((float(finite[j]), X[j], spacing, lo, hi))
        for i, j in best_pairs:
            q = np.linalg.norm(D[i, sampler.top_slice] - D[j, sampler.top_slice])
            pair_seeds.append((float(q), X[i], X[j], spacing, lo, hi))

    if refine:
        for which, cands in point_seeds.items():
            if not cands:
                continue
            cands = sorted(cands, key=lambda c: -c[0])[:seeds]
            centers, widths, lo, hi = (np.array([c[i] for c in cands]) for i in range(1, 5))
            v, _, e = _zoom_batch(lambda Z, owner: sampler.pointwise(Z)[which],
                                  centers, widths, lo, hi, refine)
            samples += e
            if which == 1:
                sup_derivs = max(sup_derivs, float(v.max()))
            else:
                flat = max(flat, float(v.max()))
        if pair_seeds:
            cands = sorted(pair_seeds, key=lambda c: -c[0])[:seeds]
            x, y, widths, lo, hi = (np.array([c[i] for c in cands]) for i in range(1, 6))
            min_dist = MIN_PAIR_FRACTION * np.linalg.norm(widths, axis=1)
            for _ in range(2):
                ty = sampler.top(y)
                v, x, e = _zoom_batch(lambda Z, o: sampler.quotient(Z, y[o], ty[o], min_dist[o]),
                                      x, widths, lo, hi, refine)
                tx = sampler.top(x)
                v, y, e2 = _zoom_batch(lambda Z, o: sampler.quotient(Z, x[o], tx[o], min_dist[o]),
                                       y, widths, lo, hi, refine)
                samples += e + e2
                pairs += e + e2
                holder = max(holder, float(v.max()))
                widths = widths / 2.0
    return NormReport(sup_derivs, holder, flat, samples, pairs, grid)


def prop_c2_bound_check(F: JetOracle, box: Box, grid: int, s: Smoothness | float) -> tuple[float, float]:
    """Sampled flat seminorm and ``(2^s / s)`` times the sampled Hoelder seminorm.

    Intended for ``1 < s <= 2``, where the flat seminorm of a globally
    nonnegative C^s function is controlled by its Hoelder seminorm.
    """
    s = Smoothness.of(s)
    if not 1 < s.s <= 2:
        raise DataError(f"the bound is stated for 1 < s <= 2, got {s.s}")
    values = F(box.grid(grid))
    if np.any(values < 0):
        raise DataError("negative sample: F must be nonnegative")
    report = sampled_norms(F, box, grid, s)
    return report.flat, (2.0**s.s / s.s) * report.holder
