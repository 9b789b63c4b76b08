"""Bump functions, jet oracles and the multivariate Faa di Bruno formula.

The model bump is ``g(t) = exp(1 - 1/(1 - t^2))`` on ``(-1, 1)`` and zero
elsewhere; ``phi0`` is its n-fold tensor power. Inside ``(-1, 1)`` every
derivative has the form ``g^(m)(t) = p_m(t) / (1 - t^2)^(2m) * g(t)`` with an
integer polynomial ``p_m``; the table of ``p_m`` is built once with exact
integer arithmetic.

A :class:`JetOracle` is anything that returns, at many points at once, all
partial derivatives up to a requested order as an ``(N, K)`` array whose
columns follow :func:`flatjet.jets.enumerate_multiindices`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .exceptions import DataError
from .jets import (
    IndexTable,
    Jet,
    MultiIndex,
    index_table,
    mi_factorial,
    mi_sub,
    polynomial_derivatives,
)

MAX_ORDER = 8
# |t| beyond this is treated as outside the support of g
EDGE = 1.0 - 1e-12
# values below this count as zero when taking fractional powers
ZERO_VALUE = 1e-300

__all__ = [
    "Box",
    "bump_g",
    "bump_table",
    "bump_polynomials",
    "plateau",
    "plateau_table",
    "phi0",
    "JetOracle",
    "CallableOracle",
    "PolynomialOracle",
    "ZeroOracle",
    "TensorBumpOracle",
    "ProductOracle",
    "ScaledOracle",
    "PowerOracle",
    "scaled_bump",
    "plateau_bump",
    "PartitionSet",
    "enumerate_partitions",
    "partition_coefficient",
    "faa_di_bruno",
    "faa_di_bruno_array",
    "compose_series",
    "power_jet",
    "falling_factorial",
]


# ---------------------------------------------------------------------------
# integer polynomial helpers (coefficient lists, lowest degree first)


def _poly_add(a: list[int], b: list[int]) -> list[int]:
    out = [0] * max(len(a), len(b))
    for i, v in enumerate(a):
        out[i] += v
    for i, v in enumerate(b):
        out[i] += v
    return out


def _poly_mul(a: list[int], b: list[int]) -> list[int]:
    out = [0] * (len(a) + len(b) - 1)
    for i, u in enumerate(a):
        for j, v in enumerate(b):
            out[i + j] += u * v
    return out


def _poly_der(a: list[int]) -> list[int]:
    return [i * a[i] for i in range(1, len(a))] or [0]


@lru_cache(maxsize=None)
def bump_polynomials(max_order: int = MAX_ORDER) -> tuple[tuple[int, ...], ...]:
    """Integer polynomials ``p_m`` with ``g^(m) = p_m / u^(2m) * g``, ``u = 1 - t^2``."""
    u = [1, 0, -1]
    u2 = _poly_mul(u, u)
    t = [0, 1]
    polys = [[1]]
    for m in range(max_order):
        p = polys[-1]
        nxt = _poly_mul(_poly_der(p), u2)
        nxt = _poly_add(nxt, _poly_mul([4 * m * c for c in _poly_mul(t, u)], p))
        nxt = _poly_add(nxt, _poly_mul([0, -2], p))
        polys.append(nxt)
    return tuple(tuple(p) for p in polys)


def bump_table(t: np.ndarray, order: int) -> np.ndarray:
    """``g^(k)(t)`` for ``k = 0..order``; shape ``t.shape + (order + 1,)``."""
    if order > MAX_ORDER:
        raise DataError(f"bump derivatives are tabulated up to order {MAX_ORDER}")
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape + (order + 1,))
    inside = np.abs(t) < EDGE
    ti = t[inside]
    u = 1.0 - ti * ti
    log_g = 1.0 - 1.0 / u
    log_u = np.log(u)
    polys = bump_polynomials(MAX_ORDER)
    for m in range(order + 1):
        coeffs = np.array(polys[m], dtype=float)
        out[inside, m] = np.polynomial.polynomial.polyval(ti, coeffs) * np.exp(
            log_g - 2 * m * log_u
        )
    return out


def bump_g(t, order: int = 0):
    """The ``order``-th derivative of the model bump ``g`` (vectorised)."""
    vals = bump_table(np.asarray(t, dtype=float), order)[..., order]
    return float(vals) if np.ndim(vals) == 0 else vals


# ---------------------------------------------------------------------------
# plateau cutoff: 1 on [-1/2, 1/2], 0 outside (-1, 1)


@lru_cache(maxsize=None)
def _logistic_polys(max_order: int) -> tuple[tuple[int, ...], ...]:
    # L(w) = 1/(1 + e^w) satisfies L' = L^2 - L, so L^(k) = poly_k(L)
    polys = [[0, 1]]
    for _ in range(max_order):
        p = polys[-1]
        polys.append(_poly_mul(_poly_der(p), [0, -1, 1]))
    return tuple(tuple(p) for p in polys)


def _step_table(tau: np.ndarray, order: int) -> np.ndarray:
    """Derivatives of the smooth step ``S(tau) = 1/(1 + exp(1/tau - 1/(1-tau)))``.

    ``S = 0`` for ``tau <= 0`` and ``S = 1`` for ``tau >= 1``.
    """
    out = np.zeros(tau.shape + (order + 1,))
    out[tau >= 1.0, 0] = 1.0
    mid = (tau > 0.0) & (tau < 1.0)
    tm = tau[mid]
    z = 1.0 / tm - 1.0 / (1.0 - tm)
    resolved = np.abs(z) < 700.0
    # outside the resolved band S is 0 or 1 to double precision, derivatives vanish
    vals = np.where(z > 0, 0.0, 1.0)
    deriv = np.zeros(tm.shape + (order + 1,))
    deriv[:, 0] = vals
    if np.any(resolved):
        tr = tm[resolved]
        zr = z[resolved]
        L = 1.0 / (1.0 + np.exp(zr))
        # Taylor coefficients of z around tr, then compose with L
        zc = np.zeros(tr.shape + (order + 1,))
        zc[:, 0] = zr
        for k in range(1, order + 1):
            zc[:, k] = (-1.0) ** k * tr ** (-k - 1) - (1.0 - tr) ** (-k - 1)
        lp = _logistic_polys(order)
        hk = np.stack(
            [
                np.polynomial.polynomial.polyval(L, np.array(lp[k], dtype=float)) / math.factorial(k)
                for k in range(order + 1)
            ],
            axis=-1,
        )
        series = _compose_univariate(zc, hk)
        deriv[resolved] = series * np.array([math.factorial(k) for k in range(order + 1)])
    out[mid] = deriv
    return out


def _compose_univariate(inner: np.ndarray, hk: np.ndarray) -> np.ndarray:
    """Normalised Taylor coefficients of ``h(inner)`` (last axis = order)."""
    order = inner.shape[-1] - 1
    D = inner.copy()
    D[..., 0] = 0.0
    result = np.zeros_like(inner)
    result[..., 0] = hk[..., 0]
    power = np.zeros_like(inner)
    power[..., 0] = 1.0
    for j in range(1, order + 1):
        nxt = np.zeros_like(inner)
        for a in range(order + 1):
            nxt[..., a:] += power[..., a : a + 1] * D[..., : order + 1 - a]
        power = nxt
        result += hk[..., j : j + 1] * power
    return result


def plateau_table(t: np.ndarray, order: int) -> np.ndarray:
    """Derivatives of the plateau cutoff ``chi(t) = S(2 - 2|t|)``."""
    t = np.asarray(t, dtype=float)
    tau = 2.0 - 2.0 * np.abs(t)
    base = _step_table(tau.ravel(), order).reshape(t.shape + (order + 1,))
    sign = np.where(t < 0, 1.0, -1.0)[..., None]
    return base * (2.0 * sign) ** np.arange(order + 1)


def plateau(t, order: int = 0):
    vals = plateau_table(np.asarray(t, dtype=float), order)[..., order]
    return float(vals) if np.ndim(vals) == 0 else vals


def phi0(x: Sequence[float], alpha: MultiIndex) -> float:
    """``d^alpha phi0(x)`` with ``phi0 = g (x) ... (x) g``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != x.size:
        raise DataError(f"multi-index {alpha} does not fit dimension {x.size}")
    if sum(alpha) > MAX_ORDER:
        raise DataError(f"derivative order above {MAX_ORDER}")
    return float(math.prod(bump_g(xj, aj) for xj, aj in zip(x, alpha)))


# ---------------------------------------------------------------------------
# boxes and oracles


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box ``[lo, hi]``; infinite bounds are allowed."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi) or any(a > b for a, b in zip(lo, hi)):
            raise DataError(f"invalid box {lo} .. {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def whole(cls, n: int) -> "Box":
        return cls((-math.inf,) * n, (math.inf,) * n)

    @property
    def n(self) -> int:
        return len(self.lo)

    def contains(self, X: np.ndarray, tol: float = 0.0) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.n)
        return np.all((X >= np.array(self.lo) - tol) & (X <= np.array(self.hi) + tol), axis=1)

    def contains_box(self, other: "Box") -> bool:
        return all(a <= b for a, b in zip(self.lo, other.lo)) and all(
            a >= b for a, b in zip(self.hi, other.hi)
        )

    def inflate(self, pad: float) -> "Box":
        return Box(tuple(v - pad for v in self.lo), tuple(v + pad for v in self.hi))

    def grid(self, resolution: int) -> np.ndarray:
        """Tensor grid with ``resolution`` points per axis, shape ``(resolution**n, n)``."""
        if resolution < 2:
            raise DataError("grid resolution must be >= 2 per axis")
        axes = [np.linspace(a, b, resolution) for a, b in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


class JetOracle:
    """A smooth function that reports all its derivatives up to a given order.

    Subclasses implement :meth:`derivatives`. ``domain`` is the box on which
    the function is declared.
    """

    n: int = 1
    domain: Box | None = None

    def derivatives(self, X: np.ndarray, order: int) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, X) -> np.ndarray:
        return self.derivatives(np.asarray(X, dtype=float).reshape(-1, self.n), 0)[:, 0]

    def jet(self, x: Sequence[float], order: int) -> Jet:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        d = self.derivatives(x.reshape(1, self.n), order)[0]
        return Jet.from_array(x, order, d)

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1 and self.n == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2 or X.shape[1] != self.n:
            raise DataError(f"expected points of dimension {self.n}, got shape {X.shape}")
        return X


class CallableOracle(JetOracle):
    """Wrap ``func(X, order) -> (N, K)`` derivative arrays."""

    def __init__(self, func: Callable[[np.ndarray, int], np.ndarray], n: int, domain: Box | None = None):
        self.func = func
        self.n = n
        self.domain = domain if domain is not None else Box.whole(n)

    def derivatives(self, X, order):
        return np.asarray(self.func(self._check(X), order), dtype=float)


class PolynomialOracle(JetOracle):
    """The polynomial represented by a jet."""

    def __init__(self, P: Jet):
        self.P = P
        self.n = P.n
        self.domain = Box.whole(P.n)

    def derivatives(self, X, order):
        return polynomial_derivatives(self.P, self._check(X), order)


class ZeroOracle(JetOracle):
    def __init__(self, n: int):
        self.n = n
        self.domain = Box.whole(n)

    def derivatives(self, X, order):
        X = self._check(X)
        return np.zeros((X.shape[0], index_table(self.n, order).size))


def _tensor_derivatives(tables: np.ndarray, table: IndexTable) -> np.ndarray:
    """Combine per-axis derivative tables ``(N, n, order+1)`` into ``(N, K)``."""
    out = np.ones((tables.shape[0], table.size))
    for j in range(table.n):
        out *= tables[:, j, table.exponents[:, j]]
    return out


class TensorBumpOracle(JetOracle):
    """``x -> profile((x - center) / radius)`` for a tensor-product profile."""

    def __init__(self, center: Sequence[float], radius, profile: str = "bump", amplitude: float = 1.0):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.n = self.center.size
        radius = np.broadcast_to(np.asarray(radius, dtype=float), (self.n,)).copy()
        if np.any(radius <= 0) or not np.all(np.isfinite(radius)):
            raise DataError(f"radius must be positive, got {radius}")
        if profile not in ("bump", "plateau"):
            raise DataError(f"unknown profile {profile!r}")
        self.radius = radius
        self.profile = profile
        self.amplitude = float(amplitude)
        self.domain = Box.whole(self.n)

    @property
    def support(self) -> Box:
        return Box(tuple(self.center - self.radius), tuple(self.center + self.radius))

    def derivatives(self, X, order):
        X = self._check(X)
        table = index_table(self.n, order)
        t = (X - self.center) / self.radius
        fn = bump_table if self.profile == "bump" else plateau_table
        per_axis = fn(t, order) * (1.0 / self.radius[:, None]) ** np.arange(order + 1)
        return self.amplitude * _tensor_derivatives(per_axis, table)


def scaled_bump(center: Sequence[float], radius: float) -> TensorBumpOracle:
    """Oracle for ``x -> phi0((x - center) / radius)``."""
    if not np.all(np.asarray(radius, dtype=float) > 0):
        raise DataError(f"radius must be positive, got {radius}")
    return TensorBumpOracle(center, radius, "bump")


def plateau_bump(center: Sequence[float], radius: float) -> TensorBumpOracle:
    """Tensor plateau cutoff: 1 on the cube of half-width ``radius/2``, supported in ``radius``."""
    return TensorBumpOracle(center, radius, "plateau")


class ProductOracle(JetOracle):
    """Pointwise product of two oracles (Leibniz rule)."""

    def __init__(self, first: JetOracle, second: JetOracle):
        if first.n != second.n:
            raise DataError("dimension mismatch in product")
        self.first, self.second, self.n = first, second, first.n
        self.domain = first.domain

    def derivatives(self, X, order):
        X = self._check(X)
        table = index_table(self.n, order)
        a = table.to_normalised(self.first.derivatives(X, order))
        b = table.to_normalised(self.second.derivatives(X, order))
        return table.to_derivatives(table.mul(a, b))


class ScaledOracle(JetOracle):
    """``x -> factor * F(x)``."""

    def __init__(self, base: JetOracle, factor: float):
        self.base, self.factor, self.n = base, float(factor), base.n
        self.domain = base.domain

    def derivatives(self, X, order):
        return self.factor * self.base.derivatives(X, order)


# ---------------------------------------------------------------------------
# multiset partitions of multi-indices


@dataclass(frozen=True)
class PartitionSet:
    """All multisets of non-zero multi-indices summing to ``alpha``."""

    alpha: MultiIndex
    partitions: tuple[tuple[MultiIndex, ...], ...]

    def __len__(self) -> int:
        return len(self.partitions)

    def __iter__(self):
        return iter(self.partitions)


def _rank(beta: MultiIndex) -> tuple:
    # graded-lex rank, larger first within an order
    return (sum(beta), beta)


@lru_cache(maxsize=None)
def enumerate_partitions(alpha: MultiIndex) -> PartitionSet:
    """Multiset partitions of ``alpha`` into non-zero multi-indices.

    Parts are listed in non-increasing graded-lex rank, which makes every
    multiset appear exactly once. The zero index has no partitions.
    """
    alpha = tuple(int(a) for a in alpha)
    if min(alpha) < 0:
        raise DataError(f"invalid multi-index {alpha}")
    if sum(alpha) > MAX_ORDER:
        raise DataError(f"partitions are supported up to order {MAX_ORDER}")
    if sum(alpha) == 0:
        return PartitionSet(alpha, ())

    def candidates(rest: MultiIndex):
        ranges = [range(r + 1) for r in rest]
        for beta in np.ndindex(*[len(r) for r in ranges]):
            if sum(beta) > 0:
                yield tuple(int(b) for b in beta)

    def recurse(rest: MultiIndex, bound: tuple | None):
        if sum(rest) == 0:
            yield ()
            return
        for beta in sorted(candidates(rest), key=_rank, reverse=True):
            if bound is not None and _rank(beta) > bound:
                continue
            for tail in recurse(mi_sub(rest, beta), _rank(beta)):
                yield (beta,) + tail

    return PartitionSet(alpha, tuple(recurse(alpha, None)))


def partition_coefficient(alpha: MultiIndex, partition: Sequence[MultiIndex]) -> int:
    """Number of set partitions of the ``|alpha|`` differentiation slots that
    collapse to ``partition``: ``alpha! / (prod beta! * prod multiplicity!)``."""
    counts: dict[MultiIndex, int] = {}
    for beta in partition:
        counts[beta] = counts.get(beta, 0) + 1
    denom = math.prod(mi_factorial(b) for b in partition) * math.prod(
        math.factorial(c) for c in counts.values()
    )
    return mi_factorial(alpha) // denom


@lru_cache(maxsize=64)
def _fdb_plan(n: int, order: int):
    """For every multi-index: list of (coefficient, |pi|, positions of the parts)."""
    table = index_table(n, order)
    plan = []
    for alpha in table.indices:
        terms = []
        for pi in enumerate_partitions(alpha):
            terms.append(
                (partition_coefficient(alpha, pi), len(pi), np.array([table.pos[b] for b in pi]))
            )
        plan.append(terms)
    return plan


def faa_di_bruno_array(derivs: np.ndarray, h_derivs: np.ndarray, n: int, order: int) -> np.ndarray:
    """All derivatives of ``h o F`` up to ``order`` at many points.

    ``derivs`` is the ``(N, K)`` derivative array of ``F``; ``h_derivs`` is
    ``(N, order + 1)`` with ``h^(k)(F(x))``.
    """
    derivs = np.asarray(derivs, dtype=float)
    h_derivs = np.asarray(h_derivs, dtype=float)
    table = index_table(n, order)
    out = np.zeros((derivs.shape[0], table.size))
    out[:, 0] = h_derivs[:, 0]
    for k, terms in enumerate(_fdb_plan(n, order)):
        if k == 0:
            continue
        acc = np.zeros(derivs.shape[0])
        for coef, size, parts in terms:
            acc += coef * h_derivs[:, size] * np.prod(derivs[:, parts], axis=1)
        out[:, k] = acc
    return out


def faa_di_bruno(F, h_derivs: Callable[[int, float], float], x: Sequence[float], alpha: MultiIndex) -> float:
    """``d^alpha (h o F)(x)`` by summation over multiset partitions of ``alpha``.

    ``F`` is a :class:`JetOracle` or a :class:`Jet` based at ``x``;
    ``h_derivs(k, t)`` returns ``h^(k)(t)``.
    """
    alpha = tuple(int(a) for a in alpha)
    order = sum(alpha)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if isinstance(F, Jet):
        if F.basepoint != tuple(x):
            raise DataError("jet basepoint differs from the evaluation point")
        if order > F.degree:
            raise DataError(f"|alpha| = {order} exceeds the jet order {F.degree}")
        d = F.to_array()
    else:
        d = F.derivatives(x.reshape(1, -1), order)[0]
    table = index_table(len(x), order)
    value = d[0]
    if order == 0:
        return float(h_derivs(0, value))
    total = 0.0
    for pi in enumerate_partitions(alpha):
        prod = math.prod(d[table.pos[b]] for b in pi)
        total += partition_coefficient(alpha, pi) * h_derivs(len(pi), value) * prod
    return float(total)


def compose_series(c: np.ndarray, hk: np.ndarray, table: IndexTable) -> np.ndarray:
    """Normalised coefficients of ``h o F`` by substituting the Taylor series.

    ``c`` holds normalised coefficients of ``F`` and ``hk[:, j] = h^(j)(F)/j!``.
    Independent of the partition-based route; used for quotients.
    """
    D = c.copy()
    D[..., 0] = 0.0
    result = np.zeros_like(c)
    result[..., 0] = hk[..., 0]
    power = np.zeros_like(c)
    power[..., 0] = 1.0
    for j in range(1, table.degree + 1):
        power = table.mul(power, D)
        result = result + hk[..., j : j + 1] * power
    return result


def reciprocal_series(c: np.ndarray, table: IndexTable) -> np.ndarray:
    """Normalised coefficients of ``1/F`` (requires ``F != 0``)."""
    v = c[..., 0:1]
    rel = c / v
    hk = np.concatenate([(-1.0) ** j * np.ones_like(v) for j in range(table.degree + 1)], axis=-1)
    return compose_series(rel, hk, table) / v


def falling_factorial(r: float, k: int) -> float:
    """``r (r-1) ... (r-k+1)``; equals 1 for ``k = 0``."""
    out = 1.0
    for i in range(k):
        out *= r - i
    return out


def power_derivatives(derivs: np.ndarray, r: float, n: int, order: int) -> np.ndarray:
    """Derivatives of ``F**r`` from those of ``F`` (vectorised).

    Points with ``F <= ZERO_VALUE`` map to zero; the caller is responsible for
    checking flatness there. The computation is normalised by ``F(x)`` so
    that ``h^(k)`` is only evaluated at 1.
    """
    derivs = np.asarray(derivs, dtype=float)
    out = np.zeros_like(derivs)
    v = derivs[:, 0]
    pos = v > ZERO_VALUE
    if np.any(pos):
        rel = derivs[pos] / v[pos, None]
        hk = np.tile([falling_factorial(r, k) for k in range(order + 1)], (rel.shape[0], 1))
        out[pos] = faa_di_bruno_array(rel, hk, n, order) * (v[pos] ** r)[:, None]
    return out


def power_jet(F_jet: Jet, r: float) -> Jet:
    """The jet of ``F**r`` at the basepoint of ``F_jet``, ``0 < r <= 1``."""
    if not 0 < r <= 1:
        raise DataError(f"exponent must lie in (0, 1], got {r}")
    value = F_jet.value
    if value < 0:
        raise DataError("power jet of a negative value")
    if value <= ZERO_VALUE:
        if any(abs(v) > 0 for a, v in F_jet.coeffs.items() if sum(a) > 0):
            raise DataError("power jet undefined at non-flat zero")
        return Jet.zero(F_jet.basepoint, F_jet.degree)
    d = power_derivatives(F_jet.to_array()[None, :], r, F_jet.n, F_jet.degree)[0]
    return Jet.from_array(F_jet.basepoint, F_jet.degree, d)


class PowerOracle(JetOracle):
    """``x -> F(x)**r`` through the Faa di Bruno formula."""

    def __init__(self, base: JetOracle, r: float):
        if not 0 < r <= 1:
            raise DataError(f"exponent must lie in (0, 1], got {r}")
        self.base, self.r, self.n = base, float(r), base.n
        self.domain = base.domain

    def derivatives(self, X, order):
        X = self._check(X)
        d = self.base.derivatives(X, order)
        if np.any(d[:, 0] < 0):
            raise DataError("power of a function with negative values")
        return power_derivatives(d, self.r, self.n, order)
