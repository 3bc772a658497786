"""Dyadic geometry on the lattices 2^{-m} Z and 2^{-m} Z^2.

Cells are half-open boxes ``[i*delta, (i+1)*delta)`` identified by their
integer index. Everything here works in index units internally so that
dyadic rescalings are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.signal import fftconvolve

from .errors import ScaleMismatchError, ValidationError

# pair counts above which sumsets switch from broadcasting to dense grids
_DIRECT_PAIR_LIMIT = 2_000_000
_DENSE_CELL_LIMIT = 1 << 26

C_T_DEFAULT = 8.0


@dataclass(frozen=True)
class Scale:
    """Dyadic scale ``delta = 2**-m`` in dimension ``dim``."""

    m: int
    dim: int = 1

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValidationError(f"scale exponent must be an integer >= 1, got {self.m}")
        if self.dim not in (1, 2):
            raise ValidationError(f"dimension must be 1 or 2, got {self.dim}")
        object.__setattr__(self, "m", int(self.m))

    @property
    def delta(self) -> float:
        return math.ldexp(1.0, -self.m)

    @property
    def exact_delta(self) -> Fraction:
        return Fraction(1, 1 << self.m)

    def with_m(self, m: int) -> "Scale":
        return Scale(m, self.dim)

    def __str__(self):
        return f"2^-{self.m} (d={self.dim})"


@dataclass(frozen=True)
class Direction:
    """Unit vector in the plane, canonicalized so that ``angle`` lies in [0, pi)."""

    angle: float

    def __post_init__(self):
        a = math.fmod(float(self.angle), math.pi)
        if a < 0:
            a += math.pi
        if a >= math.pi:
            a = 0.0
        object.__setattr__(self, "angle", a)

    @classmethod
    def from_vector(cls, v) -> "Direction":
        x, y = float(v[0]), float(v[1])
        if x == 0.0 and y == 0.0:
            raise ValidationError("zero vector has no direction")
        return cls(math.atan2(y, x))

    @property
    def vector(self) -> np.ndarray:
        return np.array([math.cos(self.angle), math.sin(self.angle)])


def _canonical_rows(idx: np.ndarray, dim: int) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        return np.zeros((0, dim), dtype=np.int64)
    idx = idx.reshape(-1, dim)
    return np.unique(idx, axis=0)


class CellSet:
    """A finite set of dyadic cells at one scale, kept in lexicographic order."""

    __slots__ = ("scale", "cells")

    def __init__(self, scale: Scale, cells=None):
        self.scale = scale
        arr = np.zeros((0, scale.dim), dtype=np.int64) if cells is None else cells
        arr = _canonical_rows(arr, scale.dim)
        arr.setflags(write=False)
        self.cells = arr

    @classmethod
    def from_points(cls, points, scale: Scale) -> "CellSet":
        """Cells of ``scale`` containing the given points (shape (N, d) or (N,))."""
        pts = np.asarray(points, dtype=float).reshape(-1, scale.dim)
        return cls(scale, np.floor(pts / scale.delta).astype(np.int64))

    @classmethod
    def full_grid(cls, scale: Scale, side: int) -> "CellSet":
        """All cells of ``[0, side*delta)^d``."""
        axes = [np.arange(side)] * scale.dim
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, scale.dim)
        return cls(scale, mesh)

    def __len__(self):
        return int(self.cells.shape[0])

    def __iter__(self):
        return (tuple(int(v) for v in row) for row in self.cells)

    def __contains__(self, index) -> bool:
        key = np.asarray(index, dtype=np.int64).reshape(1, -1)
        return bool(np.any(np.all(self.cells == key, axis=1)))

    def __eq__(self, other):
        if not isinstance(other, CellSet):
            return NotImplemented
        return self.scale == other.scale and np.array_equal(self.cells, other.cells)

    def __hash__(self):
        return hash((self.scale, self.cells.tobytes()))

    def __repr__(self):
        return f"CellSet(scale={self.scale}, n={len(self)})"

    @property
    def dim(self) -> int:
        return self.scale.dim

    def coarsen(self, target: Scale) -> "CellSet":
        _check_coarser(self.scale, target)
        shift = self.scale.m - target.m
        return CellSet(target, np.right_shift(self.cells, shift))

    def union(self, other: "CellSet") -> "CellSet":
        _check_same(self.scale, other.scale)
        return CellSet(self.scale, np.vstack([self.cells, other.cells]))

    def difference(self, other: "CellSet") -> "CellSet":
        _check_same(self.scale, other.scale)
        if len(other) == 0 or len(self) == 0:
            return self
        keep = ~_rows_in(self.cells, other.cells)
        return CellSet(self.scale, self.cells[keep])

    def issubset(self, other: "CellSet") -> bool:
        _check_same(self.scale, other.scale)
        return bool(np.all(_rows_in(self.cells, other.cells)))


def _rows_in(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Boolean mask of rows of ``a`` that occur in ``b``."""
    if len(b) == 0:
        return np.zeros(len(a), dtype=bool)
    both = np.vstack([a, b])
    lo = both.min(axis=0)
    span = both.max(axis=0) - lo + 1
    ka = np.ravel_multi_index(tuple((a - lo).T), tuple(span))
    kb = np.ravel_multi_index(tuple((b - lo).T), tuple(span))
    return np.isin(ka, kb)


def _check_same(a: Scale, b: Scale):
    if a != b:
        raise ScaleMismatchError(f"scale mismatch: {a} vs {b}")


def _check_coarser(native: Scale, target: Scale):
    if native.dim != target.dim:
        raise ScaleMismatchError(f"dimension mismatch: {native.dim} vs {target.dim}")
    if target.m > native.m:
        raise ScaleMismatchError(
            f"target scale 2^-{target.m} is finer than the native scale 2^-{native.m}"
        )


def covering_number(P, target: Scale) -> int:
    """Number of dyadic cells of ``target`` meeting ``P``.

    ``P`` may be a :class:`CellSet` (which must be at least as fine as
    ``target``) or an array of points.
    """
    if isinstance(P, CellSet):
        if len(P) == 0:
            return 0
        return len(P.coarsen(target))
    pts = np.asarray(P, dtype=float)
    if pts.size == 0:
        return 0
    return len(CellSet.from_points(pts, target))


def cell_sumset(A: CellSet, B: CellSet) -> CellSet:
    """Cells meeting the Minkowski sum of the unions of ``A`` and ``B``."""
    _check_same(A.scale, B.scale)
    d = A.dim
    if len(A) == 0 or len(B) == 0:
        return CellSet(A.scale)
    offsets = np.stack(np.meshgrid(*([np.arange(2)] * d), indexing="ij"), -1).reshape(-1, d)
    base = _index_sumset(A.cells, B.cells)
    spill = (base[:, None, :] + offsets[None, :, :]).reshape(-1, d)
    return CellSet(A.scale, spill)


def _index_sumset(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distinct sums ``i + j`` of index rows."""
    d = a.shape[1]
    if len(a) * len(b) <= _DIRECT_PAIR_LIMIT:
        return np.unique((a[:, None, :] + b[None, :, :]).reshape(-1, d), axis=0)
    lo_a, lo_b = a.min(axis=0), b.min(axis=0)
    span_a = a.max(axis=0) - lo_a + 1
    span_b = b.max(axis=0) - lo_b + 1
    if int(np.prod(span_a + span_b)) <= _DENSE_CELL_LIMIT:
        ga = np.zeros(tuple(span_a), dtype=float)
        gb = np.zeros(tuple(span_b), dtype=float)
        ga[tuple((a - lo_a).T)] = 1.0
        gb[tuple((b - lo_b).T)] = 1.0
        hits = np.argwhere(fftconvolve(ga, gb) > 0.5)
        return hits.astype(np.int64) + lo_a + lo_b
    out = []
    step = max(1, _DIRECT_PAIR_LIMIT // len(b))
    for s in range(0, len(a), step):
        out.append(np.unique((a[s:s + step, None, :] + b[None, :, :]).reshape(-1, d), axis=0))
    return np.unique(np.vstack(out), axis=0)


def _snap(v: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    r = np.round(v)
    return np.where(np.abs(v - r) <= tol, r, v)


def projected_intervals(Y: CellSet, e: Direction) -> np.ndarray:
    """Sorted integer labels ``k`` of the intervals ``[k delta, (k+1) delta)`` hit by ``pi_e(Y)``."""
    if Y.dim != 2:
        raise ValidationError("projected covering numbers need a planar cell set")
    if len(Y) == 0:
        return np.zeros(0, dtype=np.int64)
    u = e.vector
    corners = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)
    proj = (Y.cells[:, None, :].astype(float) + corners[None, :, :]) @ u
    lo = np.floor(_snap(proj.min(axis=1))).astype(np.int64)
    hi = np.ceil(_snap(proj.max(axis=1))).astype(np.int64) - 1
    hi = np.maximum(hi, lo)
    order = np.argsort(lo, kind="stable")
    lo, hi = lo[order], hi[order]
    # merge overlapping integer ranges
    labels = []
    cur_lo, cur_hi = lo[0], hi[0]
    for a, b in zip(lo[1:], hi[1:]):
        if a <= cur_hi + 1:
            cur_hi = max(cur_hi, b)
        else:
            labels.append(np.arange(cur_lo, cur_hi + 1))
            cur_lo, cur_hi = a, b
    labels.append(np.arange(cur_lo, cur_hi + 1))
    return np.concatenate(labels)


def projected_covering_number(Y: CellSet, e: Direction) -> int:
    """``|pi_e(union Y)|_delta`` with ``pi_e(x) = x . e``."""
    return int(len(projected_intervals(Y, e)))


def projection_gap(e1: Direction, e2: Direction) -> float:
    """Operator-norm distance of the two projections, minimized over orientation."""
    u, v = e1.vector, e2.vector
    return float(min(np.linalg.norm(u - v), np.linalg.norm(u + v)))


@dataclass(frozen=True)
class TransversalityReport:
    alpha: float
    n1: int
    n2: int
    size: int
    bound: float
    C_T: float
    bound_ok: bool

    @property
    def ratio(self) -> float:
        """``|Y| / (alpha^-1 n1 n2)``; the check passes iff this is at most ``C_T``."""
        return self.size * self.alpha / (self.n1 * self.n2) if self.size else 0.0


def transversality_check(Y: CellSet, e1: Direction, e2: Direction, C_T: float = C_T_DEFAULT) -> TransversalityReport:
    """Check ``|Y| <= C_T * alpha^-1 * n1 * n2`` for two projection directions."""
    if Y.dim != 2:
        raise ValidationError("transversality needs a planar cell set")
    alpha = projection_gap(e1, e2)
    if alpha <= 1e-15:
        raise ValidationError("parallel projections (alpha = 0)")
    side = 1 << Y.scale.m
    if len(Y) and (Y.cells.min() < 0 or Y.cells.max() >= side):
        raise ValidationError("cells must lie in the unit square")
    n1 = projected_covering_number(Y, e1)
    n2 = projected_covering_number(Y, e2)
    bound = C_T * n1 * n2 / alpha
    return TransversalityReport(alpha, n1, n2, len(Y), bound, C_T, bool(len(Y) <= bound))
