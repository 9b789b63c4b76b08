"""Shape-field checkers and a desk-scale finiteness-principle scanner.

The true trace norm ``||f||_{F^s(S)}`` is not computable; the scanner works
with a surrogate, the least ``M`` for which some jet field interpolating the
values has every sup, pair and flat term of the Whitney-field norm at most
``M``. This agrees with the Whitney-field norm up to a factor of 3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .calculus import power_jet
from .exceptions import DataError, NumericalError
from .jets import (
    Jet,
    Smoothness,
    WhitneyField,
    grad_norm,
    index_table,
    jet_multiply,
    subsets_up_to,
)
from .norms import GammaSpec, gamma_bound, gamma_member, whitney_field_cs_norm

__all__ = [
    "ShapeFieldSpec",
    "ConvexityWitness",
    "FinitenessReport",
    "gamma_f_member",
    "fuzz_whitney_convexity",
    "surrogate_local_norm",
    "surrogate_field",
    "max_form_norm",
    "finiteness_scan",
    "default_k",
    "MAX_SCAN_POINTS",
]

MAX_SCAN_POINTS = 14
VALUE_TOL = 1e-12


def gamma_f_member(P: Jet, x: Sequence[float], M: float, f_value: float, s) -> bool:
    """``P`` lies in ``Gamma(x, M)`` and takes the value ``f_value`` at ``x``."""
    if f_value < 0:
        raise DataError(f"f must be nonnegative, got {f_value}")
    if not gamma_member(P, GammaSpec(tuple(np.atleast_1d(x)), M), s):
        return False
    return abs(P.value - f_value) <= VALUE_TOL * max(1.0, f_value)


@dataclass(frozen=True)
class ShapeFieldSpec:
    """Points ``E`` with nonnegative values ``f`` and smoothness ``s``."""

    points: tuple[tuple[float, ...], ...]
    values: tuple[float, ...]
    s: Smoothness

    def __post_init__(self):
        pts = tuple(tuple(float(v) for v in np.atleast_1d(p)) for p in self.points)
        vals = tuple(float(v) for v in self.values)
        if len(pts) != len(vals) or not pts:
            raise DataError("points and values must be non-empty and of equal length")
        if len(set(pts)) != len(pts):
            raise DataError("duplicate points in E")
        if any(v < 0 for v in vals):
            raise DataError("f must be nonnegative")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "s", Smoothness.of(self.s))

    @property
    def n(self) -> int:
        return len(self.points[0])

    def member(self, x: Sequence[float], M: float, P: Jet) -> bool:
        key = tuple(float(v) for v in np.atleast_1d(x))
        try:
            f_value = self.values[self.points.index(key)]
        except ValueError:
            raise DataError(f"{key} is not a point of E") from None
        return gamma_f_member(P, key, M, f_value, self.s)


# ---------------------------------------------------------------------------
# Whitney convexity fuzzer


def _order_bounds(M: float, f0: float, s: Smoothness) -> list[float]:
    """Radius allowed for ``|nabla^m P(x0)|`` inside ``Gamma_f(x0, M)``, m = 0..floor(s)."""
    out = [f0]
    for m in range(1, s.floor_s + 1):
        out.append(min(M, M ** (m / s.s) * f0 ** ((s.s - m) / s.s)))
    return out


def _random_jet(rng: np.random.Generator, x0, s: Smoothness, value: float,
                radii: Sequence[float]) -> Jet:
    """Jet with the given value and ``|nabla^m| <= radii[m]`` for m >= 1."""
    n = len(x0)
    table = index_table(n, s.floor_s)
    d = np.zeros(table.size)
    d[0] = value
    for m in range(1, s.floor_s + 1):
        sl = table.slice_order(m)
        v = rng.normal(size=sl.stop - sl.start)
        norm = np.linalg.norm(v)
        if norm > 0 and radii[m] > 0:
            # half the draws sit on the boundary, where the hypotheses are tight
            scale = 1.0 if rng.random() < 0.5 else rng.uniform(0.0, 1.0)
            d[sl] = v / norm * radii[m] * scale
    return Jet.from_array(x0, s.floor_s, d)


@dataclass(frozen=True)
class ConvexityWitness:
    """One instance of the Whitney-convexity hypotheses and the resulting bound."""

    x0: tuple[float, ...]
    f0: float
    M: float
    delta: float
    P1: Jet
    P2: Jet
    Q1: Jet
    Q2: Jet
    P: Jet
    measured_C: float

    def verify(self, s) -> list[str]:
        """Independently re-check every hypothesis; returns the violated ones."""
        s = Smoothness.of(s)
        bad = []
        tol = 1e-9
        for name, jet in (("P1", self.P1), ("P2", self.P2)):
            if not gamma_f_member(jet, self.x0, self.M * (1 + tol), self.f0, s):
                bad.append(f"{name} not in Gamma_f(x0, M)")
        diff = self.P1 - self.P2
        for m in range(0, s.floor_s + 1):
            if grad_norm(diff, m) > self.M * self.delta ** (s.s - m) * (1 + tol):
                bad.append(f"|nabla^{m}(P1 - P2)| exceeds M delta^(s-m)")
            for name, Q in (("Q1", self.Q1), ("Q2", self.Q2)):
                if grad_norm(Q, m) > self.delta ** (-m) * (1 + tol):
                    bad.append(f"|nabla^{m} {name}| exceeds delta^-m")
        unit = jet_multiply(self.Q1, self.Q1) + jet_multiply(self.Q2, self.Q2)
        target = Jet.constant(self.x0, unit.degree, 1.0)
        if np.max(np.abs((unit - target).to_array())) > 1e-12:
            bad.append("jet of Q1^2 + Q2^2 differs from 1")
        if not 0 < self.delta <= 1:
            bad.append("delta outside (0, 1]")
        return bad

    def to_dict(self) -> dict:
        return {
            "x0": list(self.x0),
            "f0": self.f0,
            "M": self.M,
            "delta": self.delta,
            "P1": self.P1.to_dict(),
            "P2": self.P2.to_dict(),
            "Q1": self.Q1.to_dict(),
            "Q2": self.Q2.to_dict(),
            "P": self.P.to_dict(),
            "measured_C": self.measured_C,
        }


def fuzz_whitney_convexity(spec: ShapeFieldSpec, trials: int, seed=None,
                           max_rejections: int = 100_000) -> list[ConvexityWitness]:
    """Random instances of the Whitney-convexity hypotheses for ``Gamma_f``.

    ``Q2`` has derivatives drawn uniformly in ``[-delta^-m / 2, delta^-m / 2]``
    and ``Q1`` is the truncated jet of ``sqrt(1 - Q2^2)``, so that the jet of
    ``Q1^2 + Q2^2`` is exactly 1. Candidates violating a hypothesis are
    rejected. ``measured_C`` is the least ``C >= 1`` with the blended jet in
    ``Gamma_f(x0, C M)``.
    """
    if trials < 1:
        raise DataError("trials must be >= 1")
    s = spec.s
    rng = np.random.default_rng(seed)
    table = index_table(spec.n, s.floor_s)
    out: list[ConvexityWitness] = []
    rejections = 0
    while len(out) < trials:
        if rejections > max_rejections:
            raise NumericalError(f"could not generate witnesses after {max_rejections} rejections")
        i = int(rng.integers(len(spec.points)))
        x0, f0 = spec.points[i], spec.values[i]
        M = (f0 if f0 > 0 else 1.0) * rng.uniform(1.0, 4.0)
        delta = 1.0 - rng.random()
        radii = _order_bounds(M, f0, s)
        P1 = _random_jet(rng, x0, s, f0, radii)
        gap = [0.0] + [min(M * delta ** (s.s - m), 2 * radii[m]) for m in range(1, s.floor_s + 1)]
        P2 = P1 + _random_jet(rng, x0, s, 0.0, gap)
        d = np.zeros(table.size)
        for m in range(0, s.floor_s + 1):
            sl = table.slice_order(m)
            d[sl] = rng.uniform(-0.5, 0.5, sl.stop - sl.start) * delta ** (-m)
        Q2 = Jet.from_array(x0, s.floor_s, d)
        Q1 = power_jet(Jet.constant(x0, s.floor_s, 1.0) - jet_multiply(Q2, Q2), 0.5)
        P = jet_multiply(jet_multiply(Q1, Q1), P1) + jet_multiply(jet_multiply(Q2, Q2), P2)
        C = max(1.0, gamma_bound(P, s) / M) if abs(P.value - f0) <= 1e-9 * max(1, f0) else math.inf
        witness = ConvexityWitness(x0, f0, M, delta, P1, P2, Q1, Q2, P, C)
        if witness.verify(s):
            rejections += 1
            continue
        out.append(witness)
    return out


# ---------------------------------------------------------------------------
# surrogate norm


def max_form_norm(field: WhitneyField, s) -> float:
    """``max(sup term, pair term, flat term)`` of the Whitney-field norm."""
    s = Smoothness.of(s)
    sup_term, pair_term = whitney_field_cs_norm(field, s, parts=True)
    flat = 0.0
    for P in field.jets:
        if P.value < 0:
            raise DataError("not a nonnegative field")
        b = gamma_bound(P, s)
        flat = max(flat, b)
    return max(sup_term, pair_term, flat)


class _Problem:
    """Feasibility of ``{jet fields with P_x(x) = f(x) and every norm term <= M}``."""

    def __init__(self, points: np.ndarray, values: np.ndarray, s: Smoothness):
        self.X, self.f, self.s = points, values, s
        self.N, self.n = points.shape
        self.k = s.floor_s
        self.table = index_table(self.n, self.k)

    def lower_bound(self) -> float:
        """Terms that do not depend on the free coefficients."""
        lb = float(self.f.max())
        for i in range(self.N):
            for j in range(self.N):
                if i != j:
                    d = np.linalg.norm(self.X[i] - self.X[j])
                    if self.k == 0:
                        lb = max(lb, abs(self.f[i] - self.f[j]) / d**self.s.s)
        return lb

    def feasible(self, M: float, sweeps: int = 500, tol: float = 1e-6):
        """Return a feasible coefficient array ``(N, K)`` or ``None``."""
        if self.k == 0:
            return self.f[:, None].copy() if self.lower_bound() <= M else None
        if self.n == 1 and self.k == 1:
            return self._feasible_1d(M)
        return self._feasible_admm(M, sweeps, tol)

    def _unary(self, M: float, i: int, m: int) -> float:
        fi = self.f[i]
        return min(M, M ** (m / self.s.s) * fi ** ((self.s.s - m) / self.s.s))

    def _feasible_1d(self, M: float):
        s, x, f = self.s.s, self.X[:, 0], self.f
        if f.max() > M * (1 + 1e-15):
            return None
        lo = np.array([-self._unary(M, i, 1) for i in range(self.N)])
        hi = -lo
        for i in range(self.N):
            for j in range(self.N):
                if i == j:
                    continue
                h = x[j] - x[i]
                # |f_i + a_i h - f_j| <= M |h|^s
                a, b = (f[j] - f[i] - M * abs(h) ** s) / h, (f[j] - f[i] + M * abs(h) ** s) / h
                lo[i] = max(lo[i], min(a, b))
                hi[i] = min(hi[i], max(a, b))
        if np.any(lo > hi):
            return None
        # difference constraints |a_i - a_j| <= M |x_i - x_j|^(s-1) plus the bounds;
        # shortest paths from a virtual source give a feasible point or a negative cycle
        N = self.N
        W = np.full((N + 1, N + 1), np.inf)
        np.fill_diagonal(W, 0.0)
        for i in range(N):
            W[N, i] = hi[i]
            W[i, N] = -lo[i]
            for j in range(N):
                if i != j:
                    W[j, i] = M * abs(x[i] - x[j]) ** (s - 1)
        for k in range(N + 1):
            W = np.minimum(W, W[:, k : k + 1] + W[k : k + 1, :])
        if np.any(np.diag(W) < -1e-12 * max(1.0, M)):
            return None
        slopes = W[N, :N] - W[N, N]
        slopes = np.clip(slopes, lo, hi)
        return np.stack([f, slopes], axis=1)

    def _constraints(self, M: float):
        """Rows ``(A, b, r)`` with the constraint ``|A v + b| <= r``, ``v`` the free coefficients."""
        table, N, K = self.table, self.N, self.table.size
        free = K - 1
        blocks = []
        for i in range(N):
            for m in range(1, self.k + 1):
                sl = table.slice_order(m)
                A = np.zeros((sl.stop - sl.start, N * free))
                A[:, i * free + sl.start - 1 : i * free + sl.stop - 1] = np.eye(sl.stop - sl.start)
                blocks.append((A, np.zeros(sl.stop - sl.start), self._unary(M, i, m)))
        # recentering the jet at x_i to x_j is linear in its normalised coefficients
        for i in range(N):
            for j in range(N):
                if i == j:
                    continue
                h = (self.X[j] - self.X[i])[None, :]
                basis = np.eye(K)
                T = np.stack([table.to_derivatives(table.shift(table.to_normalised(e), h)[0])
                              for e in basis], axis=1)
                dist = float(np.linalg.norm(h))
                for m in range(0, self.k + 1):
                    sl = table.slice_order(m)
                    rows = T[sl]
                    A = np.zeros((rows.shape[0], N * free))
                    A[:, i * free : (i + 1) * free] = rows[:, 1:]
                    b = rows[:, 0] * self.f[i]
                    if m == 0:
                        b = b - self.f[j]
                    else:
                        A[:, j * free + sl.start - 1 : j * free + sl.stop - 1] -= np.eye(rows.shape[0])
                    blocks.append((A, b, M * dist ** (self.s.s - m)))
        return blocks

    def _feasible_admm(self, M: float, sweeps: int, tol: float):
        if self.f.max() > M * (1 + 1e-15):
            return None
        blocks = self._constraints(M)
        scale = max(1.0, M)
        # equilibrate: each block becomes |A v + b| <= 1 (or = 0), so short pairs
        # and small values are not drowned out in the least-squares step
        weights = [1.0 / max(blk[2], 1e-9 * scale) for blk in blocks]
        A = np.concatenate([blk[0] * w for blk, w in zip(blocks, weights)])
        b = np.concatenate([blk[1] * w for blk, w in zip(blocks, weights)])
        radii = [blk[2] * w for blk, w in zip(blocks, weights)]
        sizes = [blk[0].shape[0] for blk in blocks]
        cuts = np.cumsum([0] + sizes)
        pinv = np.linalg.pinv(A)
        z = np.zeros_like(b)
        u = np.zeros_like(b)
        v = np.zeros(A.shape[1])

        def project(w):
            out = w.copy()
            for c, r in enumerate(radii):
                seg = w[cuts[c] : cuts[c + 1]]
                nrm = np.linalg.norm(seg)
                if nrm > r:
                    out[cuts[c] : cuts[c + 1]] = seg * (r / nrm if nrm > 0 else 0.0)
            return out

        def residual(v):
            w = A @ v + b
            return max(
                max(0.0, (np.linalg.norm(w[cuts[c] : cuts[c + 1]]) - r) / weights[c])
                for c, r in enumerate(radii)
            )

        for sweep in range(sweeps):
            v = pinv @ (z - u - b)
            w = A @ v + b
            z = project(w + u)
            u = u + w - z
            if sweep % 25 == 24 and residual(v) <= tol * scale:
                break
        if residual(v) > tol * scale:
            return None
        K = self.table.size
        coeffs = np.zeros((self.N, K))
        coeffs[:, 0] = self.f
        coeffs[:, 1:] = v.reshape(self.N, K - 1)
        return coeffs


def _as_arrays(S, f):
    X = np.asarray(S, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    values = np.asarray(f, dtype=float).ravel()
    if X.shape[0] == 0 or X.shape[0] != values.size:
        raise DataError("S must be non-empty with one value per point")
    if np.any(values < 0):
        raise DataError("values must be nonnegative")
    if len({tuple(p) for p in X}) != X.shape[0]:
        raise DataError("duplicate points in S")
    return X, values


def surrogate_field(S, f, s, budget: int = 40, rel_tol: float = 1e-3) -> tuple[float, WhitneyField]:
    """Bisection for the surrogate norm; returns ``(M, field attaining at most M)``."""
    s = Smoothness.of(s)
    X, values = _as_arrays(S, f)
    problem = _Problem(X, values, s)

    def build(coeffs):
        return WhitneyField.from_jets(
            Jet.from_array(x, s.floor_s, c) for x, c in zip(X, coeffs)
        )

    lo = problem.lower_bound()
    if lo == 0.0:
        zero = np.zeros((X.shape[0], problem.table.size))
        return 0.0, build(zero)
    sol = problem.feasible(lo)
    if sol is not None:
        return max_form_norm(build(sol), s), build(sol)
    hi = 2.0 * lo
    for _ in range(budget):
        sol = problem.feasible(hi)
        if sol is not None:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise NumericalError(f"budget exhausted before bracketing the surrogate: last bracket [{lo}, {hi}]")
    best = sol
    for _ in range(budget):
        if hi - lo <= rel_tol * hi:
            break
        mid = 0.5 * (lo + hi)
        trial = problem.feasible(mid)
        if trial is None:
            lo = mid
        else:
            hi, best = mid, trial
    field = build(best)
    # the exact norm of the field found can only be smaller than the bracket
    return min(hi, max_form_norm(field, s)), field


def surrogate_local_norm(S, f, s, budget: int = 40) -> float:
    """Least ``M`` (upper estimate within 0.1%) such that an interpolating jet field
    has all sup, pair and flat terms ``<= M``."""
    return surrogate_field(S, f, s, budget)[0]


# ---------------------------------------------------------------------------
# scan


def default_k(n: int, s) -> int:
    """``2^dim P`` with ``dim P = C(n + floor(s), n)``."""
    return 2 ** math.comb(n + Smoothness.of(s).floor_s, n)


@dataclass(frozen=True)
class FinitenessReport:
    points: tuple[tuple[float, ...], ...]
    values: tuple[float, ...]
    s: float
    k: int
    local_max: float
    global_norm: float
    ratio: float
    worst_subset: tuple[int, ...]
    subsets: int
    c_cap: float
    violation: bool
    subset_norms: Mapping[tuple[int, ...], float] = field(repr=False, default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "E": [list(p) for p in self.points],
            "f": list(self.values),
            "s": self.s,
            "k": self.k,
            "local_max": self.local_max,
            "global": self.global_norm,
            "ratio": self.ratio,
            "worst_subset": list(self.worst_subset),
            "subsets": self.subsets,
            "c_cap": self.c_cap,
            "violation": self.violation,
        }


def finiteness_scan(E, f, s, k: int | None = None, c_cap: float = 10.0,
                    budget: int = 40) -> FinitenessReport:
    """Compare the surrogate norm on ``E`` with its maximum over subsets of size ``<= k``.

    Each subset value is the better of its own bisection and the exact norm
    of the global optimum restricted to the subset, so subset values never
    exceed the global value.
    """
    s = Smoothness.of(s)
    X, values = _as_arrays(E, f)
    if X.shape[0] > MAX_SCAN_POINTS:
        raise DataError(
            f"|E| = {X.shape[0]} exceeds {MAX_SCAN_POINTS}; subset enumeration is exponential, "
            "scan a random sample of E instead"
        )
    n = X.shape[1]
    k = default_k(n, s) if k is None else int(k)
    if k < 1:
        raise DataError("k must be >= 1")
    global_norm, global_field = surrogate_field(X, values, s, budget)
    jets = global_field.jets
    norms: dict[tuple[int, ...], float] = {}
    for subset in subsets_up_to(range(X.shape[0]), k):
        if len(subset) == X.shape[0]:
            norms[subset] = global_norm
            continue
        own = surrogate_field(X[list(subset)], values[list(subset)], s, budget)[0]
        restricted = max_form_norm(WhitneyField.from_jets(jets[i] for i in subset), s)
        norms[subset] = min(own, restricted)
    worst = max(norms, key=lambda key: (norms[key], -len(key)))
    local_max = norms[worst]
    if local_max == 0.0:
        ratio = 1.0 if global_norm == 0.0 else math.inf
    else:
        ratio = global_norm / local_max
    return FinitenessReport(
        tuple(tuple(p) for p in X.tolist()),
        tuple(values.tolist()),
        s.s,
        k,
        local_max,
        global_norm,
        ratio,
        worst,
        len(norms),
        float(c_cap),
        bool(global_norm > c_cap * local_max),
        norms,
    )
