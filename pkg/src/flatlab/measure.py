"""Finitely supported measures on the dyadic lattice ``delta Z^d``.

A :class:`DeltaMeasure` stores lexicographically sorted integer indices and
strictly positive weights. Weights are float64 by default; passing
``fractions.Fraction`` weights (an object array) switches every operation in
this module to exact rational arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy.signal import fftconvolve
from scipy.spatial import ConvexHull, QhullError

from .errors import BudgetError, ScaleMismatchError, ValidationError
from .grid import CellSet, Scale, _check_coarser, _check_same

DIRECT_CONVOLUTION_LIMIT = 10_000_000
LATTICE_BUDGET = 1 << 27
_BINCOUNT_LIMIT = 1 << 26
RECOMPUTE_BUDGET = 400_000_000
MASS_TOL = 1e-9


def _is_exact(weights: np.ndarray) -> bool:
    return weights.dtype == object


def _group_sum(keys: np.ndarray, weights: np.ndarray):
    """Unique rows of ``keys`` with summed weights (order: lexicographic)."""
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = np.asarray(inv).reshape(-1)
    if _is_exact(weights):
        acc = [Fraction(0)] * len(uniq)
        for k, w in zip(inv.tolist(), weights.tolist()):
            acc[k] += w
        out = np.empty(len(uniq), dtype=object)
        out[:] = acc
        return uniq, out
    return uniq, np.bincount(inv, weights=weights, minlength=len(uniq))


def _as_weight_array(weights) -> np.ndarray:
    seq = list(weights) if not isinstance(weights, np.ndarray) else weights
    if isinstance(seq, np.ndarray) and seq.dtype != object:
        return seq.astype(float).reshape(-1)
    items = list(np.asarray(seq, dtype=object).reshape(-1))
    if (
        items
        and any(isinstance(w, Fraction) for w in items)
        and all(isinstance(w, (Fraction, int)) and not isinstance(w, bool) for w in items)
    ):
        out = np.empty(len(items), dtype=object)
        out[:] = [Fraction(w) for w in items]
        return out
    return np.asarray([float(w) for w in items], dtype=float)


class DeltaMeasure:
    """Finite measure on ``2^{-m} Z^d`` with strictly positive weights."""

    __slots__ = ("scale", "indices", "weights", "_mass")

    def __init__(self, scale: Scale, indices, weights, *, _trusted: bool = False):
        self.scale = scale
        idx = np.asarray(indices, dtype=np.int64).reshape(-1, scale.dim)
        w = _as_weight_array(weights)
        if len(w) != len(idx):
            raise ValidationError("indices and weights differ in length")
        if not _trusted:
            if _is_exact(w):
                if any(x < 0 for x in w):
                    raise ValidationError("negative weight")
            elif not np.all(np.isfinite(w)) or np.any(w < 0):
                raise ValidationError("weights must be finite and nonnegative")
            idx, w = _group_sum(idx, w)
            keep = np.array([x > 0 for x in w], dtype=bool)
            idx, w = idx[keep], w[keep]
        if len(w) == 0:
            raise ValidationError("a delta-measure needs at least one atom")
        mass = sum(w.tolist(), Fraction(0)) if _is_exact(w) else float(math.fsum(w))
        if mass > 1 + MASS_TOL:
            raise ValidationError(f"total mass {float(mass)} exceeds 1")
        idx.setflags(write=False)
        w.setflags(write=False)
        self.indices = idx
        self.weights = w
        self._mass = mass

    # construction helpers -------------------------------------------------
    @classmethod
    def from_dict(cls, scale: Scale, atoms: dict) -> "DeltaMeasure":
        keys = [k if isinstance(k, tuple) else (k,) for k in atoms]
        return cls(scale, keys, list(atoms.values()))

    def with_weights(self, weights) -> "DeltaMeasure":
        return DeltaMeasure(self.scale, self.indices, weights)

    # basic properties -----------------------------------------------------
    @property
    def dim(self) -> int:
        return self.scale.dim

    @property
    def delta(self) -> float:
        return self.scale.delta

    @property
    def exact(self) -> bool:
        return _is_exact(self.weights)

    @property
    def total_mass(self):
        return self._mass

    def __len__(self):
        return int(self.indices.shape[0])

    def __repr__(self):
        mode = "exact" if self.exact else "float"
        return f"DeltaMeasure(scale={self.scale}, atoms={len(self)}, mass={float(self._mass):.6g}, {mode})"

    def __eq__(self, other):
        if not isinstance(other, DeltaMeasure):
            return NotImplemented
        return (
            self.scale == other.scale
            and np.array_equal(self.indices, other.indices)
            and list(self.weights) == list(other.weights)
        )

    __hash__ = None

    def as_dict(self) -> dict:
        return {tuple(int(v) for v in row): w for row, w in zip(self.indices, self.weights.tolist())}

    def float_weights(self) -> np.ndarray:
        return self.weights.astype(float) if self.exact else self.weights

    def to_float(self) -> "DeltaMeasure":
        if not self.exact:
            return self
        return DeltaMeasure(self.scale, self.indices, self.float_weights(), _trusted=True)

    def to_exact(self) -> "DeltaMeasure":
        if self.exact:
            return self
        w = np.empty(len(self), dtype=object)
        w[:] = [Fraction(x) for x in self.weights.tolist()]
        return DeltaMeasure(self.scale, self.indices, w, _trusted=True)

    def positions(self) -> np.ndarray:
        """Atom locations as an (N, d) float array."""
        return self.indices.astype(float) * self.delta

    def support(self) -> CellSet:
        return CellSet(self.scale, self.indices)

    def diameter(self) -> float:
        return support_diameter(self.indices) * self.delta

    def mass_of(self, predicate_mask: np.ndarray):
        sel = self.weights[np.asarray(predicate_mask, dtype=bool)]
        return sum(sel.tolist(), Fraction(0)) if self.exact else float(math.fsum(sel))


def support_diameter(indices: np.ndarray) -> float:
    """Euclidean diameter of a set of index rows, in index units."""
    pts = np.asarray(indices, dtype=float)
    if len(pts) <= 1:
        return 0.0
    if pts.shape[1] == 1:
        return float(pts.max() - pts.min())
    if len(pts) > 64:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            # collinear: lexicographic extremes are the endpoints
            pts = pts[[0, -1]]
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((diff ** 2).sum(-1)).max())


# ---------------------------------------------------------------------------
# windows


@dataclass(frozen=True)
class Window:
    """Half-open axis-aligned box ``[lo, hi)``; infinite bounds allowed."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi) or len(lo) not in (1, 2):
            raise ValidationError("window bounds must share dimension 1 or 2")
        if any(not a < b for a, b in zip(lo, hi)):
            raise ValidationError("window must have nonempty interior")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def everything(cls, dim: int) -> "Window":
        return cls((-math.inf,) * dim, (math.inf,) * dim)

    @classmethod
    def interval(cls, a: float, b: float) -> "Window":
        return cls((a,), (b,))

    @property
    def dim(self) -> int:
        return len(self.lo)

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        return np.all((pts >= np.array(self.lo)) & (pts < np.array(self.hi)), axis=1)

    def mapped(self, j: int, shift) -> "Window":
        """Image under ``x -> 2^j x + shift``."""
        lam = math.ldexp(1.0, j)
        s = np.broadcast_to(np.asarray(shift, dtype=float), (self.dim,))
        return Window(tuple(lam * a + b for a, b in zip(self.lo, s)), tuple(lam * a + b for a, b in zip(self.hi, s)))

    def to_json(self):
        return {"lo": list(self.lo), "hi": list(self.hi)}


# ---------------------------------------------------------------------------
# constructors


def atom(scale: Scale, index=None, exact: bool = False) -> DeltaMeasure:
    """Unit point mass at ``index`` (origin by default)."""
    idx = np.zeros(scale.dim, dtype=np.int64) if index is None else np.asarray(index, dtype=np.int64)
    return DeltaMeasure(scale, idx.reshape(1, -1), [Fraction(1)] if exact else [1.0])


def uniform(scale: Scale, indices, exact: bool = False) -> DeltaMeasure:
    """Probability measure giving equal weight to each distinct index."""
    idx = np.unique(np.asarray(indices, dtype=np.int64).reshape(-1, scale.dim), axis=0)
    n = len(idx)
    w = [Fraction(1, n)] * n if exact else np.full(n, 1.0 / n)
    return DeltaMeasure(scale, idx, w)


def uniform_interval(a, b, scale: Scale, exact: bool = False) -> DeltaMeasure:
    """Uniform measure on the lattice points of ``[a, b)``."""
    lo = math.ceil(Fraction(a) / scale.exact_delta)
    hi = math.ceil(Fraction(b) / scale.exact_delta)
    if hi <= lo:
        raise ValidationError("empty interval")
    return uniform(Scale(scale.m, 1), np.arange(lo, hi), exact=exact)


@dataclass(frozen=True)
class AffineMap:
    """``x -> ratio * x + shift`` with ``0 < ratio < 1``."""

    ratio: object
    shift: object

    def __call__(self, x):
        return self.ratio * x + self.shift

    @property
    def contraction(self):
        return self.ratio

    @property
    def fixed_point(self):
        return self.shift / (1 - self.ratio)


@dataclass(frozen=True)
class ConformalMap:
    """Differentiable contraction given by ``f`` and ``df`` evaluators.

    The contraction certificate is the maximum of ``|df|`` sampled at 2^12
    points of ``[-1, 1]``; it must be below 1.
    """

    f: Callable
    df: Callable
    samples: int = 1 << 12
    contraction: float = field(init=False)

    def __post_init__(self):
        xs = np.linspace(-1.0, 1.0, self.samples)
        lip = float(np.max(np.abs(np.asarray(self.df(xs), dtype=float))))
        object.__setattr__(self, "contraction", lip)

    def __call__(self, x):
        return self.f(x)

    @property
    def fixed_point(self):
        x = 0.0
        for _ in range(400):
            x = float(self.f(x))
        return x


@dataclass(frozen=True)
class IFSSpec:
    """Iterated function system on the line with probability weights."""

    maps: tuple
    probs: tuple

    def __post_init__(self):
        maps, probs = tuple(self.maps), tuple(self.probs)
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "probs", probs)
        if not maps or len(maps) != len(probs):
            raise ValidationError("IFS needs one probability per map")
        if any(p <= 0 for p in probs):
            raise ValidationError("IFS probabilities must be positive")
        total = sum(probs, Fraction(0)) if self.exact else math.fsum(float(p) for p in probs)
        if (self.exact and total != 1) or (not self.exact and abs(total - 1.0) > 1e-12):
            raise ValidationError(f"IFS probabilities sum to {float(total)}, not 1")
        for f in maps:
            c = f.contraction
            if not 0 < c < 1:
                raise ValidationError(f"map is not a contraction (certificate {float(c)})")
        lo, hi = self.attractor_hull()
        if lo < -1 - 1e-12 or hi > 1 + 1e-12:
            raise ValidationError(f"attractor hull [{float(lo)}, {float(hi)}] leaves [-1, 1]")

    @property
    def exact(self) -> bool:
        return all(
            isinstance(f, AffineMap) and isinstance(f.ratio, Fraction) and isinstance(f.shift, Fraction)
            for f in self.maps
        ) and all(isinstance(p, Fraction) for p in self.probs)

    @property
    def affine(self) -> bool:
        return all(isinstance(f, AffineMap) for f in self.maps)

    def attractor_hull(self):
        """Convex hull of the attractor."""
        if self.affine:
            fps = [f.fixed_point for f in self.maps]
            return min(fps), max(fps)
        lo, hi = -2.0, 2.0
        for _ in range(200):
            xs = np.linspace(lo, hi, 257)
            imgs = np.concatenate([np.asarray(f(xs), dtype=float) for f in self.maps])
            nlo, nhi = float(imgs.min()), float(imgs.max())
            if abs(nlo - lo) < 1e-14 and abs(nhi - hi) < 1e-14:
                break
            lo, hi = nlo, nhi
        return lo, hi


def affine_ifs(ratios: Sequence, shifts: Sequence, probs: Sequence | None = None, exact: bool = False) -> IFSSpec:
    """Convenience constructor; ``exact`` converts every parameter to ``Fraction``."""
    n = len(ratios)
    if probs is None:
        probs = [Fraction(1, n)] * n if exact else [1.0 / n] * n
    conv = Fraction if exact else float
    maps = tuple(AffineMap(conv(r), conv(b)) for r, b in zip(ratios, shifts))
    return IFSSpec(maps, tuple(conv(p) for p in probs))


BUILTIN_IFS = {
    # name: (ratios, shifts); all uniform weights
    "cantor4": ((Fraction(1, 4), Fraction(1, 4)), (Fraction(0), Fraction(3, 4))),
    "cantor8": ((Fraction(1, 8), Fraction(1, 8)), (Fraction(0), Fraction(7, 8))),
    "cantor3": ((Fraction(1, 3), Fraction(1, 3)), (Fraction(0), Fraction(2, 3))),
    "lebesgue": ((Fraction(1, 2), Fraction(1, 2)), (Fraction(0), Fraction(1, 2))),
}


def builtin_ifs(name: str, exact: bool = False) -> IFSSpec:
    try:
        ratios, shifts = BUILTIN_IFS[name]
    except KeyError:
        raise ValidationError(f"unknown built-in measure {name!r}; choose from {sorted(BUILTIN_IFS)}") from None
    return affine_ifs(ratios, shifts, exact=exact)


def from_ifs(spec: IFSSpec, scale: Scale, node_budget: int = 1 << 22) -> DeltaMeasure:
    """Discretize the self-conformal measure of ``spec`` at ``scale``.

    Words are expanded until ``contraction(w) * diam(hull) <= delta``; each
    leaf puts mass ``p_w`` on the lattice point nearest ``f_w(x0)`` where
    ``x0`` is the fixed point of the first map.
    """
    if scale.dim != 1:
        raise ValidationError("IFS measures are one-dimensional")
    lo, hi = spec.attractor_hull()
    diam = hi - lo
    if spec.exact:
        return _from_ifs_exact(spec, scale, diam, node_budget)
    delta = scale.delta
    x0 = float(spec.maps[0].fixed_point)
    ratios = np.array([float(f.contraction) for f in spec.maps])
    probs = np.array([float(p) for p in spec.probs])
    if spec.affine:
        shifts = np.array([float(f.shift) for f in spec.maps])
        r, b, p = np.ones(1), np.zeros(1), np.ones(1)
        pos_out, w_out = [], []
        nodes = 1
        while len(r):
            done = r * float(diam) <= delta
            pos_out.append(r[done] * x0 + b[done])
            w_out.append(p[done])
            r, b, p = r[~done], b[~done], p[~done]
            if not len(r):
                break
            nodes += len(r) * len(ratios)
            if nodes > node_budget:
                raise BudgetError(f"IFS expansion exceeds node budget {node_budget}")
            r, b, p = (
                (r[:, None] * ratios[None, :]).ravel(),
                (r[:, None] * shifts[None, :] + b[:, None]).ravel(),
                (p[:, None] * probs[None, :]).ravel(),
            )
        pos = np.concatenate(pos_out)
        w = np.concatenate(w_out)
    else:
        pos, w = _expand_conformal(spec, x0, float(diam), delta, node_budget)
    idx = np.floor(pos / delta + 0.5).astype(np.int64)
    mu = DeltaMeasure(scale, idx, w)
    # renormalize rounding drift so the mass is 1 to machine precision
    return DeltaMeasure(scale, mu.indices, mu.weights / mu.total_mass, _trusted=True)


def _expand_conformal(spec, x0, diam, delta, node_budget):
    pos, wts = [], []
    stack = [((), 1.0, 1.0)]
    nodes = 0
    while stack:
        word, c, p = stack.pop()
        nodes += 1
        if nodes > node_budget:
            raise BudgetError(f"IFS expansion exceeds node budget {node_budget}")
        if c * diam <= delta:
            x = x0
            for i in reversed(word):
                x = float(spec.maps[i](x))
            pos.append(x)
            wts.append(p)
            continue
        for i in reversed(range(len(spec.maps))):
            stack.append((word + (i,), c * spec.maps[i].contraction, p * float(spec.probs[i])))
    return np.array(pos), np.array(wts)


def _from_ifs_exact(spec, scale, diam, node_budget):
    delta = scale.exact_delta
    x0 = spec.maps[0].fixed_point
    level = [(Fraction(1), Fraction(0), Fraction(1))]
    atoms: dict = {}
    nodes = 1
    while level:
        nxt = []
        for r, b, p in level:
            if r * diam <= delta:
                k = math.floor((r * x0 + b) / delta + Fraction(1, 2))
                atoms[(k,)] = atoms.get((k,), Fraction(0)) + p
            else:
                for f, q in zip(spec.maps, spec.probs):
                    nxt.append((r * f.ratio, r * f.shift + b, p * q))
        nodes += len(nxt)
        if nodes > node_budget:
            raise BudgetError(f"IFS expansion exceeds node budget {node_budget}")
        level = nxt
    return DeltaMeasure.from_dict(scale, atoms)


def builtin_measure(name: str, scale: Scale, exact: bool = False) -> DeltaMeasure:
    return from_ifs(builtin_ifs(name, exact=exact), Scale(scale.m, 1))


# ---------------------------------------------------------------------------
# operations


def coarsen(rho: DeltaMeasure, target: Scale) -> DeltaMeasure:
    """``rho^(target)(z) = rho([z, z + delta_target))`` on the coarser lattice."""
    _check_coarser(rho.scale, target)
    if target.m == rho.scale.m:
        return rho
    idx = np.right_shift(rho.indices, rho.scale.m - target.m)
    return DeltaMeasure(target, *_group_sum(idx, rho.weights), _trusted=True)


def restrict(sigma: DeltaMeasure, V: Window) -> DeltaMeasure:
    """Drop atoms outside the half-open window ``V`` (no renormalization)."""
    if V.dim != sigma.dim:
        raise ValidationError("window dimension differs from the measure")
    keep = V.contains(sigma.positions())
    if not keep.any():
        raise ValidationError("restriction is empty")
    return DeltaMeasure(sigma.scale, sigma.indices[keep], sigma.weights[keep], _trusted=True)


def pushforward_similarity(sigma: DeltaMeasure, j: int, shift=0) -> DeltaMeasure:
    """Image under ``x -> 2^j x + shift``; the scale is relabelled to ``2^j delta``.

    ``shift`` must be a multiple of the new lattice spacing.
    """
    if int(j) != j:
        raise ValidationError("similarity ratio must be an integral power of 2")
    new = Scale(sigma.scale.m - int(j), sigma.dim)
    s = np.broadcast_to(np.asarray(shift, dtype=object), (sigma.dim,))
    steps = []
    for v in s:
        q = Fraction(v) / new.exact_delta
        if q.denominator != 1:
            raise ValidationError(f"shift {v} is not aligned with the lattice 2^-{new.m}")
        steps.append(int(q))
    idx = sigma.indices + np.array(steps, dtype=np.int64)
    return DeltaMeasure(new, idx, sigma.weights, _trusted=True)


def product(mu: DeltaMeasure, nu: DeltaMeasure) -> DeltaMeasure:
    """Product of two one-dimensional measures on the planar lattice."""
    if mu.dim != 1 or nu.dim != 1:
        raise ValidationError("product expects two one-dimensional measures")
    if mu.scale.m != nu.scale.m:
        raise ScaleMismatchError(f"scale mismatch: {mu.scale} vs {nu.scale}")
    a, b = mu.indices[:, 0], nu.indices[:, 0]
    idx = np.stack([np.repeat(a, len(b)), np.tile(b, len(a))], axis=1)
    w = np.multiply.outer(mu.weights, nu.weights).reshape(-1)
    return DeltaMeasure(Scale(mu.scale.m, 2), idx, w, _trusted=True)


def lift_to_curve(nu: DeltaMeasure, curve) -> DeltaMeasure:
    """Push a measure on [-1, 1] onto the graph of ``curve`` (floor to cell)."""
    if nu.dim != 1:
        raise ValidationError("lift expects a one-dimensional measure")
    x = nu.positions()[:, 0]
    if x.min() < -1 or x.max() > 1:
        raise ValidationError("support must lie in [-1, 1] to lift onto the curve")
    exact_phi = getattr(curve, "phi_exact", None)
    if nu.exact and exact_phi is not None:
        d = nu.scale.exact_delta
        ys = np.array([math.floor(exact_phi(int(i) * d) / d) for i in nu.indices[:, 0]], dtype=np.int64)
    else:
        ys = np.floor(np.asarray(curve.phi(x), dtype=float) / nu.delta).astype(np.int64)
    idx = np.stack([nu.indices[:, 0], ys], axis=1)
    return DeltaMeasure(Scale(nu.scale.m, 2), *_group_sum(idx, nu.weights), _trusted=True)


def l2sh_norm_sq(nu: DeltaMeasure):
    """``sum_z nu(z)^2``."""
    if nu.exact:
        return sum((w * w for w in nu.weights.tolist()), Fraction(0))
    return float(math.fsum(nu.weights * nu.weights))


def l2sh_norm(nu: DeltaMeasure) -> float:
    return math.sqrt(float(l2sh_norm_sq(nu)))


def _box(idx: np.ndarray):
    lo = idx.min(axis=0)
    return lo, idx.max(axis=0) - lo + 1


def convolve(mu: DeltaMeasure, nu: DeltaMeasure, backend: str = "auto") -> DeltaMeasure:
    """Discrete convolution ``(mu * nu)(z) = sum_x mu(x) nu(z - x)``.

    ``backend`` is ``"direct"`` (sparse pair summation), ``"dense"`` (FFT on
    the bounding boxes with direct recomputation of tiny entries) or
    ``"auto"``. Exact-mode measures always use direct summation.
    """
    _check_same(mu.scale, nu.scale)
    if backend not in ("auto", "direct", "dense"):
        raise ValidationError(f"unknown convolution backend {backend!r}")
    if mu.exact or nu.exact:
        return _convolve_exact(mu.to_exact(), nu.to_exact())
    if backend == "auto":
        backend = "direct" if len(mu) * len(nu) <= DIRECT_CONVOLUTION_LIMIT else "dense"
    if backend == "direct":
        return _convolve_direct(mu, nu)
    return _convolve_dense(mu, nu)


def _convolve_exact(mu, nu):
    acc: dict = {}
    b_items = list(zip(map(tuple, nu.indices.tolist()), nu.weights.tolist()))
    for ka, wa in zip(map(tuple, mu.indices.tolist()), mu.weights.tolist()):
        for kb, wb in b_items:
            k = tuple(x + y for x, y in zip(ka, kb))
            acc[k] = acc.get(k, Fraction(0)) + wa * wb
    return DeltaMeasure.from_dict(mu.scale, acc)


def _convolve_direct(mu, nu):
    lo_a, span_a = _box(mu.indices)
    lo_b, span_b = _box(nu.indices)
    span = span_a + span_b - 1
    lo = lo_a + lo_b
    total = int(np.prod(span))
    ka = np.ravel_multi_index(tuple((mu.indices - lo_a).T), tuple(span))
    kb = np.ravel_multi_index(tuple((nu.indices - lo_b).T), tuple(span))
    if total <= _BINCOUNT_LIMIT:
        acc = np.zeros(total)
        step = max(1, DIRECT_CONVOLUTION_LIMIT // max(len(nu), 1))
        for s in range(0, len(mu), step):
            keys = (ka[s:s + step, None] + kb[None, :]).ravel()
            acc += np.bincount(keys, weights=np.multiply.outer(mu.weights[s:s + step], nu.weights).ravel(), minlength=total)
        hit = np.flatnonzero(acc)
        vals = acc[hit]
    else:
        keys = (ka[:, None] + kb[None, :]).ravel()
        hit, inv = np.unique(keys, return_inverse=True)
        vals = np.bincount(inv, weights=np.multiply.outer(mu.weights, nu.weights).ravel())
    idx = np.stack(np.unravel_index(hit, tuple(span)), axis=1) + lo
    return DeltaMeasure(mu.scale, idx.astype(np.int64), vals, _trusted=True)


def _convolve_dense(mu, nu):
    lo_a, span_a = _box(mu.indices)
    lo_b, span_b = _box(nu.indices)
    out_span = span_a + span_b - 1
    if int(np.prod(out_span)) > LATTICE_BUDGET:
        raise BudgetError(f"dense convolution grid {tuple(out_span)} exceeds the lattice budget")
    ga = np.zeros(tuple(span_a))
    gb = np.zeros(tuple(span_b))
    ga[tuple((mu.indices - lo_a).T)] = mu.weights
    gb[tuple((nu.indices - lo_b).T)] = nu.weights
    vals = fftconvolve(ga, gb)
    ia, ib = np.zeros_like(ga), np.zeros_like(gb)
    ia[tuple((mu.indices - lo_a).T)] = 1.0
    ib[tuple((nu.indices - lo_b).T)] = 1.0
    support = fftconvolve(ia, ib) > 0.5
    pos = np.argwhere(support)
    w = vals[tuple(pos.T)]
    # entries near the FFT noise floor are recomputed by direct summation while
    # that stays within budget; past it they keep their clipped FFT value
    floor = 1e-6 * float(vals.max())
    small = np.flatnonzero(w <= floor)
    if len(small):
        if len(small) * len(mu) <= RECOMPUTE_BUDGET:
            from ._kernels import convolution_at

            w[small] = convolution_at(mu.indices - lo_a, mu.weights, gb, pos[small])
        else:
            w[small] = np.maximum(w[small], 0.0)
            keep = w > 0
            pos, w = pos[keep], w[keep]
    idx = pos.astype(np.int64) + lo_a + lo_b
    return DeltaMeasure(mu.scale, idx, w, _trusted=True)


def self_convolution_power(sigma: DeltaMeasure, k: int, budget: int = LATTICE_BUDGET, backend: str = "auto") -> DeltaMeasure:
    """``sigma^{*k}`` by repeated squaring."""
    if int(k) != k or k < 1:
        raise ValidationError("power must be a positive integer")
    _, span = _box(sigma.indices)
    if int(np.prod(k * (span - 1) + 1)) > budget:
        raise BudgetError(f"support of the {k}-fold power exceeds the lattice budget {budget}")
    result = None
    base = sigma
    k = int(k)
    while True:
        if k & 1:
            result = base if result is None else convolve(result, base, backend)
        k >>= 1
        if not k:
            break
        base = convolve(base, base, backend)
    return result
