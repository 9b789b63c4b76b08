"""Multi-indices and the algebra of polynomial jets.

A :class:`Jet` of degree ``k`` at a basepoint ``x0`` stores the Taylor data
``d^alpha P(x0)`` for every multi-index with ``|alpha| <= k``. Coefficients are
kept sparse and keyed by plain tuples of non-negative integers.

Internally, vectorised routines work on *normalised* coefficient arrays,
``c_alpha = d^alpha P / alpha!``, laid out along the last axis in the
graded-lexicographic order returned by :func:`enumerate_multiindices`. In that
basis products are plain convolutions and recentering only needs integer
binomial factors.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import DataError

MultiIndex = tuple[int, ...]

__all__ = [
    "MultiIndex",
    "Smoothness",
    "Jet",
    "WhitneyField",
    "IndexTable",
    "index_table",
    "enumerate_multiindices",
    "jet_eval",
    "jet_derivative",
    "grad_norm",
    "jet_recenter",
    "jet_multiply",
    "polynomial_derivatives",
]


# ---------------------------------------------------------------------------
# multi-indices


def enumerate_multiindices(n: int, max_order: int) -> list[MultiIndex]:
    """All multi-indices of length ``n`` with order at most ``max_order``.

    The order is graded lexicographic: by total order first, then by
    descending entries, e.g. ``(0,0), (1,0), (0,1), (2,0), (1,1), (0,2)``.
    """
    if n < 1:
        raise DataError(f"dimension must be >= 1, got {n}")
    if max_order < 0:
        return []
    return list(_enumerate(n, max_order))


@lru_cache(maxsize=None)
def _enumerate(n: int, max_order: int) -> tuple[MultiIndex, ...]:
    out: list[MultiIndex] = []
    for order in range(max_order + 1):
        out.extend(sorted(_compositions(order, n), reverse=True))
    return tuple(out)


def _compositions(total: int, parts: int) -> Iterable[MultiIndex]:
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def mi_order(alpha: MultiIndex) -> int:
    return sum(alpha)


def mi_factorial(alpha: MultiIndex) -> int:
    return math.prod(math.factorial(a) for a in alpha)


def mi_binomial(alpha: MultiIndex, beta: MultiIndex) -> int:
    """Product of binomial coefficients ``C(alpha_j, beta_j)``."""
    return math.prod(math.comb(a, b) for a, b in zip(alpha, beta))


def mi_add(alpha: MultiIndex, beta: MultiIndex) -> MultiIndex:
    return tuple(a + b for a, b in zip(alpha, beta))


def mi_sub(alpha: MultiIndex, beta: MultiIndex) -> MultiIndex:
    return tuple(a - b for a, b in zip(alpha, beta))


def mi_le(beta: MultiIndex, alpha: MultiIndex) -> bool:
    return all(b <= a for a, b in zip(alpha, beta))


def parse_multiindex(key: str) -> MultiIndex:
    return tuple(int(part) for part in key.split(","))


def format_multiindex(alpha: MultiIndex) -> str:
    return ",".join(str(a) for a in alpha)


# ---------------------------------------------------------------------------
# smoothness


@dataclass(frozen=True)
class Smoothness:
    """A smoothness exponent ``s > 0``.

    ``floor_s`` is the largest integer strictly below ``s`` (so it is 1 for
    ``s = 2``) and ``sigma = s - floor_s`` lies in ``(0, 1]``.
    """

    s: float

    def __post_init__(self):
        s = float(self.s)
        if not math.isfinite(s) or s <= 0:
            raise DataError(f"smoothness must be a positive real, got {self.s!r}")
        object.__setattr__(self, "s", s)

    @property
    def floor_s(self) -> int:
        return math.ceil(self.s) - 1

    @property
    def sigma(self) -> float:
        return self.s - self.floor_s

    @classmethod
    def of(cls, s: "Smoothness | float") -> "Smoothness":
        return s if isinstance(s, Smoothness) else cls(s)


# ---------------------------------------------------------------------------
# index tables for the vectorised kernels


class IndexTable:
    """Precomputed combinatorics for all multi-indices of order <= ``degree``."""

    def __init__(self, n: int, degree: int):
        self.n = n
        self.degree = degree
        self.indices: tuple[MultiIndex, ...] = _enumerate(n, degree)
        self.pos: dict[MultiIndex, int] = {a: i for i, a in enumerate(self.indices)}
        self.size = len(self.indices)
        self.orders = np.array([sum(a) for a in self.indices], dtype=int)
        self.factorials = np.array([mi_factorial(a) for a in self.indices], dtype=float)
        self.exponents = np.array(self.indices, dtype=int).reshape(self.size, n)

        # normalised product: c[k] += a[i] * b[j] whenever idx_i + idx_j = idx_k
        ii, jj, kk = [], [], []
        for i, a in enumerate(self.indices):
            for j, b in enumerate(self.indices):
                ab = mi_add(a, b)
                if sum(ab) <= degree:
                    ii.append(i)
                    jj.append(j)
                    kk.append(self.pos[ab])
        self.mul_i = np.array(ii, dtype=int)
        self.mul_j = np.array(jj, dtype=int)
        self.mul_k = np.array(kk, dtype=int)
        self._mul_scatter = np.zeros((len(kk), self.size))
        self._mul_scatter[np.arange(len(kk)), self.mul_k] = 1.0

        # recentering: c'[k] = sum_g binom(idx_k + g, idx_k) c[idx_k + g] h^g
        rk, rsrc, rg, rcoef = [], [], [], []
        for k, a in enumerate(self.indices):
            for g_pos, g in enumerate(self.indices):
                ag = mi_add(a, g)
                if sum(ag) <= degree:
                    rk.append(k)
                    rsrc.append(self.pos[ag])
                    rg.append(g_pos)
                    rcoef.append(mi_binomial(ag, a))
        self.shift_k = np.array(rk, dtype=int)
        self.shift_src = np.array(rsrc, dtype=int)
        self.shift_g = np.array(rg, dtype=int)
        self.shift_coef = np.array(rcoef, dtype=float)
        self._shift_scatter = np.zeros((len(rk), self.size))
        self._shift_scatter[np.arange(len(rk)), self.shift_k] = self.shift_coef

    def slice_order(self, m: int) -> slice:
        """Positions of the multi-indices of order exactly ``m``."""
        start = math.comb(self.n + m - 1, self.n) if m > 0 else 0
        stop = math.comb(self.n + m, self.n)
        return slice(start, stop)

    def monomials(self, h: np.ndarray) -> np.ndarray:
        """``h**idx`` for every multi-index; ``h`` has shape ``(N, n)``."""
        h = np.asarray(h, dtype=float).reshape(-1, self.n)
        out = np.ones((h.shape[0], self.size))
        for j in range(self.n):
            powers = h[:, j : j + 1] ** np.arange(self.degree + 1)
            out *= powers[:, self.exponents[:, j]]
        return out

    def mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Truncated product of normalised coefficient arrays (last axis)."""
        return (a[..., self.mul_i] * b[..., self.mul_j]) @ self._mul_scatter

    def shift(self, c: np.ndarray, h: np.ndarray) -> np.ndarray:
        """Recentre normalised coefficients ``c`` (shape (K,) or (N, K)) by ``h`` (N, n)."""
        mono = self.monomials(h)
        c = np.asarray(c, dtype=float)
        if c.ndim == 1:
            c = np.broadcast_to(c, (mono.shape[0], self.size))
        return (c[:, self.shift_src] * mono[:, self.shift_g]) @ self._shift_scatter

    def to_derivatives(self, c: np.ndarray) -> np.ndarray:
        return c * self.factorials

    def to_normalised(self, d: np.ndarray) -> np.ndarray:
        return d / self.factorials


@lru_cache(maxsize=64)
def index_table(n: int, degree: int) -> IndexTable:
    return IndexTable(n, degree)


# ---------------------------------------------------------------------------
# jets


@dataclass(frozen=True)
class Jet:
    """Taylor data of a polynomial of degree <= ``degree`` at ``basepoint``.

    ``coeffs`` maps a multi-index ``alpha`` to ``d^alpha P(basepoint)``;
    missing keys mean zero.
    """

    basepoint: tuple[float, ...]
    degree: int
    coeffs: Mapping[MultiIndex, float] = field(default_factory=dict)

    def __post_init__(self):
        base = tuple(float(v) for v in np.atleast_1d(np.asarray(self.basepoint, dtype=float)))
        n = len(base)
        degree = int(self.degree)
        if n < 1:
            raise DataError("a jet needs a basepoint of dimension >= 1")
        if degree < 0:
            raise DataError(f"jet degree must be >= 0, got {degree}")
        clean: dict[MultiIndex, float] = {}
        for key, value in dict(self.coeffs).items():
            alpha = parse_multiindex(key) if isinstance(key, str) else tuple(int(a) for a in key)
            if len(alpha) != n or min(alpha) < 0:
                raise DataError(f"multi-index {key!r} does not fit dimension {n}")
            if sum(alpha) > degree:
                raise DataError(f"multi-index {alpha} exceeds jet degree {degree}")
            value = float(value)
            if value != 0.0:
                clean[alpha] = value
        object.__setattr__(self, "basepoint", base)
        object.__setattr__(self, "degree", degree)
        object.__setattr__(self, "coeffs", MappingProxyType(clean))

    @property
    def n(self) -> int:
        return len(self.basepoint)

    @property
    def value(self) -> float:
        return self.coeffs.get((0,) * self.n, 0.0)

    def __getitem__(self, alpha: MultiIndex) -> float:
        return self.coeffs.get(tuple(alpha), 0.0)

    def is_zero(self) -> bool:
        return not self.coeffs

    # array views --------------------------------------------------------

    def to_array(self) -> np.ndarray:
        """Derivatives in graded-lex order, length ``C(n + degree, n)``."""
        table = index_table(self.n, self.degree)
        out = np.zeros(table.size)
        for alpha, v in self.coeffs.items():
            out[table.pos[alpha]] = v
        return out

    @classmethod
    def from_array(cls, basepoint: Sequence[float], degree: int, values: Sequence[float]) -> "Jet":
        base = tuple(np.atleast_1d(np.asarray(basepoint, dtype=float)))
        table = index_table(len(base), degree)
        values = np.asarray(values, dtype=float)
        if values.shape != (table.size,):
            raise DataError(f"expected {table.size} jet coefficients, got shape {values.shape}")
        return cls(base, degree, dict(zip(table.indices, values.tolist())))

    @classmethod
    def constant(cls, basepoint: Sequence[float], degree: int, value: float) -> "Jet":
        base = tuple(np.atleast_1d(np.asarray(basepoint, dtype=float)))
        return cls(base, degree, {(0,) * len(base): value})

    @classmethod
    def zero(cls, basepoint: Sequence[float], degree: int) -> "Jet":
        return cls(tuple(np.atleast_1d(np.asarray(basepoint, dtype=float))), degree, {})

    # linear structure ---------------------------------------------------

    def _check_compatible(self, other: "Jet") -> None:
        if self.basepoint != other.basepoint:
            raise DataError(f"basepoint mismatch: {self.basepoint} vs {other.basepoint}")
        if self.degree != other.degree:
            raise DataError(f"degree mismatch: {self.degree} vs {other.degree}")

    def __add__(self, other: "Jet") -> "Jet":
        self._check_compatible(other)
        keys = set(self.coeffs) | set(other.coeffs)
        return Jet(self.basepoint, self.degree, {k: self[k] + other[k] for k in keys})

    def __sub__(self, other: "Jet") -> "Jet":
        return self + (-1.0) * other

    def __rmul__(self, scalar: float) -> "Jet":
        return Jet(self.basepoint, self.degree, {k: scalar * v for k, v in self.coeffs.items()})

    def __neg__(self) -> "Jet":
        return (-1.0) * self

    # serialisation ------------------------------------------------------

    def to_dict(self) -> dict:
        table = index_table(self.n, self.degree)
        coeffs = {
            format_multiindex(a): self.coeffs[a] for a in table.indices if a in self.coeffs
        }
        return {"basepoint": list(self.basepoint), "degree": self.degree, "coeffs": coeffs}

    @classmethod
    def from_dict(cls, data: Mapping) -> "Jet":
        try:
            return cls(tuple(data["basepoint"]), int(data["degree"]), dict(data.get("coeffs", {})))
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed jet: {exc}") from exc


def jet_eval(P: Jet, x: Sequence[float]) -> float:
    """Evaluate the Taylor polynomial of ``P`` at ``x``."""
    h = np.asarray(x, dtype=float) - np.asarray(P.basepoint)
    total = 0.0
    for alpha, c in P.coeffs.items():
        total += c * math.prod(hj**a for hj, a in zip(h, alpha)) / mi_factorial(alpha)
    return float(total)


def jet_derivative(P: Jet, beta: MultiIndex) -> Jet:
    """Jet of ``d^beta P`` at the same basepoint, of degree ``degree - |beta|``."""
    beta = tuple(int(b) for b in beta)
    if len(beta) != P.n or min(beta) < 0:
        raise DataError(f"multi-index {beta} does not fit dimension {P.n}")
    if sum(beta) > P.degree:
        raise DataError(f"derivative order {sum(beta)} exceeds jet degree {P.degree}")
    coeffs = {}
    for alpha, c in P.coeffs.items():
        if mi_le(beta, alpha):
            coeffs[mi_sub(alpha, beta)] = c
    return Jet(P.basepoint, P.degree - sum(beta), coeffs)


def jet_recenter(P: Jet, y: Sequence[float]) -> Jet:
    """The same polynomial, re-expanded at ``y``."""
    y = tuple(float(v) for v in np.atleast_1d(np.asarray(y, dtype=float)))
    if len(y) != P.n:
        raise DataError(f"point of dimension {len(y)} for a jet of dimension {P.n}")
    if y == P.basepoint or P.is_zero():
        return Jet(y, P.degree, P.coeffs)
    table = index_table(P.n, P.degree)
    c = table.to_normalised(P.to_array())
    h = np.subtract(y, P.basepoint).reshape(1, -1)
    shifted = table.shift(c, h)[0]
    return Jet.from_array(y, P.degree, table.to_derivatives(shifted))


def grad_norm(P: Jet, m: int, at: Sequence[float] | None = None) -> float:
    """``|nabla^m P(at)| = sqrt(sum_{|alpha|=m} (d^alpha P(at))^2)``."""
    if m < 0 or m > P.degree:
        raise DataError(f"order {m} outside 0..{P.degree}")
    Q = P if at is None else jet_recenter(P, at)
    return math.sqrt(sum(v * v for a, v in Q.coeffs.items() if sum(a) == m))


def jet_multiply(P: Jet, Q: Jet) -> Jet:
    """Jet of the pointwise product, truncated at the common degree."""
    P._check_compatible(Q)
    table = index_table(P.n, P.degree)
    prod = table.mul(table.to_normalised(P.to_array()), table.to_normalised(Q.to_array()))
    return Jet.from_array(P.basepoint, P.degree, table.to_derivatives(prod))


def polynomial_derivatives(P: Jet, X: np.ndarray, order: int | None = None) -> np.ndarray:
    """Derivatives of the polynomial ``P`` at many points.

    Returns an ``(N, K)`` array of ``d^alpha P(x)`` for ``|alpha| <= order``
    (default ``P.degree``); orders above the degree are zero.
    """
    X = np.asarray(X, dtype=float).reshape(-1, P.n)
    order = P.degree if order is None else order
    out_table = index_table(P.n, order)
    out = np.zeros((X.shape[0], out_table.size))
    if P.is_zero():
        return out
    table = index_table(P.n, P.degree)
    c = table.to_normalised(P.to_array())
    shifted = table.to_derivatives(table.shift(c, X - np.asarray(P.basepoint)))
    common = min(order, P.degree)
    k = math.comb(P.n + common, P.n)
    out[:, :k] = shifted[:, :k]
    return out


# ---------------------------------------------------------------------------
# Whitney fields


@dataclass(frozen=True)
class WhitneyField:
    """A finite family of jets ``(P_x)`` indexed by distinct points ``x``."""

    entries: Mapping[tuple[float, ...], Jet]

    def __post_init__(self):
        clean: dict[tuple[float, ...], Jet] = {}
        degree = None
        for point, jet in dict(self.entries).items():
            key = tuple(float(v) for v in np.atleast_1d(point))
            if key != jet.basepoint:
                raise DataError(f"jet basepoint {jet.basepoint} differs from its key {key}")
            if degree is not None and jet.degree != degree:
                raise DataError("all jets of a Whitney field must share one degree")
            if key in clean:
                raise DataError(f"duplicate point {key}")
            degree = jet.degree
            clean[key] = jet
        if not clean:
            raise DataError("a Whitney field needs at least one point")
        if len({len(k) for k in clean}) != 1:
            raise DataError("all points of a Whitney field must share one dimension")
        object.__setattr__(self, "entries", MappingProxyType(clean))

    @classmethod
    def from_jets(cls, jets: Iterable[Jet]) -> "WhitneyField":
        entries: dict[tuple[float, ...], Jet] = {}
        for jet in jets:
            if jet.basepoint in entries:
                raise DataError(f"duplicate point {jet.basepoint}")
            entries[jet.basepoint] = jet
        return cls(entries)

    @property
    def points(self) -> np.ndarray:
        return np.array(list(self.entries), dtype=float)

    @property
    def jets(self) -> list[Jet]:
        return list(self.entries.values())

    @property
    def n(self) -> int:
        return len(next(iter(self.entries)))

    @property
    def degree(self) -> int:
        return next(iter(self.entries.values())).degree

    def __len__(self) -> int:
        return len(self.entries)

    def scaled(self, factor: float) -> "WhitneyField":
        return WhitneyField.from_jets(factor * j for j in self.jets)

    def to_list(self) -> list[dict]:
        return [{"point": list(p), "jet": j.to_dict()} for p, j in self.entries.items()]

    @classmethod
    def from_list(cls, data: Sequence[Mapping]) -> "WhitneyField":
        jets = []
        for item in data:
            jet = Jet.from_dict(item["jet"])
            if tuple(float(v) for v in item["point"]) != jet.basepoint:
                raise DataError(f"point {item['point']} does not match jet basepoint")
            jets.append(jet)
        return cls.from_jets(jets)


def subsets_up_to(items: Sequence, k: int) -> Iterable[tuple]:
    """Non-empty subsets of ``items`` of size at most ``k``."""
    for size in range(1, min(k, len(items)) + 1):
        yield from itertools.combinations(items, size)
