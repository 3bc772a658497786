"""Empirical probes: capture sets, sumset growth, row structure and the L^2 lower bound."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import AtomicSupportError, ValidationError
from .grid import CellSet, Scale, cell_sumset
from .measure import DeltaMeasure, coarsen, convolve, l2sh_norm_sq
from .perfectness import PerfectnessQuery, scan_perfectness
from .spectral import riesz_energy
from .uniformize import UniformSetRecord, verify_uniform

MASS_RTOL = 1e-12


# ---------------------------------------------------------------------------
# good pairs


@dataclass(frozen=True)
class GoodPairSet:
    """Pairs ``(p, q)`` of lattice indices with their product mass.

    ``pairs`` has shape (K, 2d): the first ``d`` columns index ``p`` (a cell
    of ``nu``), the last ``d`` index ``q`` (a cell of ``sigma``).
    """

    scale: Scale
    pairs: np.ndarray
    mass: object

    @classmethod
    def from_pairs(cls, nu: DeltaMeasure, sigma: DeltaMeasure, pairs) -> "GoodPairSet":
        if nu.scale != sigma.scale:
            raise ValidationError("nu and sigma must share the scale")
        d = nu.dim
        arr = np.unique(np.asarray(pairs, dtype=np.int64).reshape(-1, 2 * d), axis=0)
        if not len(arr):
            raise ValidationError("good-pair set is empty (mass 0)")
        wp = _lookup(nu, arr[:, :d])
        wq = _lookup(sigma, arr[:, d:])
        if nu.exact and sigma.exact:
            mass = sum((a * b for a, b in zip(wp, wq)), Fraction(0))
        else:
            mass = math.fsum(float(a) * float(b) for a, b in zip(wp, wq))
        if not 0 < mass <= 1 + 1e-9:
            raise ValidationError(f"good-pair mass {float(mass)} outside (0, 1]")
        arr.setflags(write=False)
        return cls(nu.scale, arr, mass)

    @classmethod
    def everything(cls, nu: DeltaMeasure, sigma: DeltaMeasure) -> "GoodPairSet":
        a = np.repeat(nu.indices, len(sigma), axis=0)
        b = np.tile(sigma.indices, (len(nu), 1))
        return cls.from_pairs(nu, sigma, np.hstack([a, b]))

    def __len__(self):
        return len(self.pairs)


def _lookup(mu: DeltaMeasure, idx: np.ndarray) -> np.ndarray:
    """Weights of ``mu`` at ``idx``; every row must be an atom."""
    both = np.vstack([mu.indices, idx])
    lo = both.min(axis=0)
    span = both.max(axis=0) - lo + 1
    keys = np.ravel_multi_index(tuple((mu.indices - lo).T), tuple(span))
    want = np.ravel_multi_index(tuple((idx - lo).T), tuple(span))
    pos = np.searchsorted(keys, want)
    pos = np.minimum(pos, len(keys) - 1)
    if not np.all(keys[pos] == want):
        raise ValidationError("good pairs reference cells outside the supports")
    return mu.weights[pos]


# ---------------------------------------------------------------------------
# minimal capture sets


def minimal_capture_set(pi: DeltaMeasure, mass_target) -> CellSet:
    """Fewest cells of ``pi`` carrying at least ``mass_target``.

    Cells are taken by decreasing mass (ties in index order), which is optimal
    at cell granularity.
    """
    total = pi.total_mass
    if pi.exact and isinstance(mass_target, (Fraction, int)):
        target = Fraction(mass_target)
        if not 0 < target <= total:
            raise ValidationError("mass target must lie in (0, total mass]")
        order = sorted(range(len(pi)), key=lambda i: (-pi.weights[i], i))
        acc = Fraction(0)
        for n, i in enumerate(order, 1):
            acc += pi.weights[i]
            if acc >= target:
                return CellSet(pi.scale, pi.indices[order[:n]])
        raise AssertionError("unreachable")
    target = float(mass_target)
    tot = float(total)
    if not 0 < target <= tot * (1 + MASS_RTOL):
        raise ValidationError(f"mass target {target} must lie in (0, {tot}]")
    w = pi.float_weights()
    order = np.argsort(-w, kind="stable")
    cum = np.cumsum(w[order])
    n = int(np.searchsorted(cum, target * (1 - MASS_RTOL) - 1e-300, side="left")) + 1
    n = min(n, len(w))
    return CellSet(pi.scale, pi.indices[order[:n]])


@dataclass
class CaptureTable:
    alpha: float
    epsilon: float
    rows: list
    fitted_exponent: float | None
    sigma_hypothesis: dict = field(default_factory=dict)

    @property
    def all_pass(self) -> bool:
        return all(r["pass"] for r in self.rows)


def capture_counting_experiment(mu: DeltaMeasure, sigma: DeltaMeasure, alpha: float, epsilon: float, ms, D: float = 16.0, energy: bool = True) -> CaptureTable:
    """Tabulate ``|E|_delta`` against ``delta^{-alpha-eps}`` for minimal capture sets.

    ``mu`` and ``sigma`` are given at a common fine scale and coarsened to
    each ``delta = 2^{-m}``; ``E`` captures ``delta^eps`` of ``mu * sigma``.
    The uniform-perfectness hypothesis on ``sigma`` is scanned at the finest
    scale and recorded; an atomic ``sigma`` is flagged as violating it.
    """
    if mu.scale != sigma.scale:
        raise ValidationError("mu and sigma must share the fine scale")
    ms = sorted(int(m) for m in ms)
    if not ms:
        raise ValidationError("need at least one scale")
    if ms[-1] > mu.scale.m:
        raise ValidationError("requested scale is finer than the inputs")
    try:
        rep = scan_perfectness(sigma, PerfectnessQuery(D))
        hyp = {"uniformly_perfect": rep.best_beta < 1, "beta": rep.best_beta, "D": D, "diam": rep.diam_support}
    except AtomicSupportError as exc:
        hyp = {"uniformly_perfect": False, "beta": None, "D": D, "diam": 0.0, "reason": str(exc)}
    rows = []
    for m in ms:
        sc = Scale(m, mu.dim)
        mu_m = coarsen(mu, sc)
        sig_m = coarsen(sigma, sc)
        pi = convolve(mu_m, sig_m)
        delta = sc.delta
        E = minimal_capture_set(pi, min(delta ** epsilon, float(pi.total_mass)))
        threshold = delta ** (-alpha - epsilon)
        row = {
            "m": m,
            "delta": delta,
            "E_size": len(E),
            "support_size": len(pi),
            "threshold": threshold,
            "pass": len(E) >= threshold,
        }
        if energy:
            I = riesz_energy(mu_m, alpha, delta, "kernel")
            row["energy"] = I
            row["energy_hypothesis"] = I <= delta ** (-epsilon)
        rows.append(row)
    fitted = None
    if len(rows) >= 2:
        x = [math.log(1 / r["delta"]) for r in rows]
        y = [math.log(r["E_size"]) for r in rows]
        fitted = float(np.polyfit(x, y, 1)[0])
    return CaptureTable(float(alpha), float(epsilon), rows, fitted, hyp)


# ---------------------------------------------------------------------------
# sumset growth


@dataclass(frozen=True)
class GrowthReport:
    X_size: int
    sumset_size: int
    ratio: float
    threshold: float
    max_fiber: int
    local_size: int
    local_bound: float
    local_hypothesis: bool
    pairs: int
    pair_mass: float


def sumset_growth_experiment(X: UniformSetRecord, sigma: DeltaMeasure, selection: str = "all", fraction: float = 1.0, alpha: float = 1.0, epsilon: float = 0.05) -> GrowthReport:
    """Sumset of the good pairs between ``X`` and the cells of ``sigma``.

    ``selection="all"`` takes every pair; ``"top-mass"`` ranks pairs by
    ``nu(p) sigma(q)`` (``nu`` uniform on ``X``) and keeps a shortest prefix
    of mass at least ``fraction``.
    """
    check = verify_uniform(X.cells, X.T, X.m)
    if not check.ok:
        raise ValidationError(f"X is not uniform: {check.violation}")
    scale = X.cells.scale
    if sigma.dim != scale.dim:
        raise ValidationError("dimension mismatch")
    if sigma.scale.m < scale.m:
        raise ValidationError("sigma is coarser than X")
    sig = coarsen(sigma, scale)
    Xc = X.cells
    nX = len(Xc)
    w = sig.float_weights()
    if selection == "all":
        Q = CellSet(scale, sig.indices)
        S = cell_sumset(Xc, Q)
        fiber = len(cell_sumset(CellSet(scale, Xc.cells[:1]), Q))
        pairs, mass = nX * len(sig), float(w.sum())
    elif selection == "top-mass":
        if not 0 < fraction <= 1:
            raise ValidationError("fraction must lie in (0, 1]")
        # nu(p) sigma(q) = sigma(q)/|X|: rank fibers over q, then p in index order
        order = np.argsort(-w, kind="stable")
        cum = np.cumsum(w[order])
        goal = fraction * float(w.sum()) * (1 - MASS_RTOL)
        full = int(np.searchsorted(cum, goal, side="left"))
        full_q = sig.indices[order[:full]]
        got = float(cum[full - 1]) if full else 0.0
        parts = []
        pairs = full * nX
        if full:
            parts.append(cell_sumset(Xc, CellSet(scale, full_q)).cells)
        if got < goal and full < len(order):
            qw = float(w[order[full]])
            need = int(math.ceil((goal - got) / (qw / nX) * (1 - MASS_RTOL)))
            need = min(max(need, 1), nX)
            parts.append(cell_sumset(CellSet(scale, Xc.cells[:need]), CellSet(scale, sig.indices[order[full:full + 1]])).cells)
            pairs += need
            got += need * qw / nX
        S = CellSet(scale, np.vstack(parts))
        qs = sig.indices[order[:full + (1 if pairs > full * nX else 0)]]
        fiber = len(cell_sumset(CellSet(scale, Xc.cells[:1]), CellSet(scale, qs)))
        mass = got
    else:
        raise ValidationError(f"unknown selection {selection!r}")
    delta = scale.delta
    half = Scale(scale.m // 2, scale.dim)
    parents, counts = np.unique(np.right_shift(Xc.cells, scale.m - half.m), axis=0, return_counts=True)
    local = int(counts.max())
    bound = delta ** (-alpha / 2)
    return GrowthReport(
        X_size=nX,
        sumset_size=len(S),
        ratio=len(S) / nX,
        threshold=delta ** (-epsilon) * nX,
        max_fiber=fiber,
        local_size=local,
        local_bound=bound,
        local_hypothesis=local <= bound,
        pairs=int(pairs),
        pair_mass=float(mass),
    )


# ---------------------------------------------------------------------------
# row structure


@dataclass(frozen=True)
class RowReport:
    histogram: dict  # count -> number of rectangles
    rectangles: int
    full_rows: int
    full_threshold: float
    eta: float
    total: int


def row_structure(XQ: CellSet, theta, eta: float | None = None, alpha: float = 1.0) -> RowReport:
    """Counts of ``XQ`` cells in the ``delta x Delta`` rectangles tiling its square.

    ``Delta = sqrt(delta)``. The rectangles have their long side along the
    tangent of ``theta`` and form the tiling anchored at the square's lower
    left corner; those containing the center of some ``delta``-cell of the
    square constitute the cover. A rectangle is a full row when its count is
    at least ``Delta^{eta - 1}``; ``eta`` defaults to ``(2 - alpha)/4``.
    """
    sc = XQ.scale
    if sc.dim != 2:
        raise ValidationError("row structure is planar")
    if sc.m % 2:
        raise ValidationError("delta must be an even power of 2 so that sqrt(delta) is dyadic")
    if not len(XQ):
        raise ValidationError("empty cell set")
    h = sc.m // 2
    sq = np.unique(np.right_shift(XQ.cells, h), axis=0)
    if len(sq) != 1:
        raise ValidationError("cells are not contained in a single sqrt(delta)-square")
    eta = (2 - alpha) / 4 if eta is None else float(eta)
    delta = sc.delta
    Delta = math.sqrt(delta)
    side = 1 << h
    corner = sq[0] * side
    local = np.stack(np.meshgrid(np.arange(side), np.arange(side), indexing="ij"), -1).reshape(-1, 2)

    def rect_ids(offsets):
        centers = (offsets + 0.5) * delta
        t = centers @ theta.tangent
        n = centers @ theta.normal
        # snap before flooring so rows aligned with the grid are not split by rounding
        a = np.floor(np.round(t / Delta, 9)).astype(np.int64)
        b = np.floor(np.round(n / delta, 9)).astype(np.int64)
        return np.stack([a, b], 1)

    cover = np.unique(rect_ids(local), axis=0)
    ids = rect_ids(XQ.cells - corner)
    lookup = {r: i for i, r in enumerate(map(tuple, cover.tolist()))}
    counts = np.zeros(len(cover), dtype=np.int64)
    for r in map(tuple, ids.tolist()):
        counts[lookup[r]] += 1
    values, freq = np.unique(counts, return_counts=True)
    thr = Delta ** (eta - 1)
    return RowReport(
        histogram={int(v): int(f) for v, f in zip(values, freq)},
        rectangles=len(cover),
        full_rows=int(np.sum(counts >= thr * (1 - 1e-12))),
        full_threshold=thr,
        eta=eta,
        total=int(counts.sum()),
    )


# ---------------------------------------------------------------------------
# L^2 lower bound


@dataclass(frozen=True)
class L2BoundReport:
    c: object
    C: object
    lhs: object  # ||mu * sigma||^2
    rhs: object  # (c^2 / C) ||mu||^2
    ok: bool

    def to_json(self) -> dict:
        return {k: (str(v) if isinstance(v, Fraction) else v) for k, v in self.__dict__.items()}


def l2_lower_bound_check(mu: DeltaMeasure, sigma: DeltaMeasure, G: GoodPairSet) -> L2BoundReport:
    """Check ``||mu * sigma||_2 >= (c / sqrt C) ||mu||_2`` exactly.

    ``c = (mu x sigma)(G)`` and ``C = |{x + y : (x, y) in G}| / |spt mu|``.
    Squares of both sides are compared in rational arithmetic.
    """
    if mu.dim != 1 or sigma.dim != 1:
        raise ValidationError("the L^2 lower bound is stated for measures on the line")
    if mu.scale != sigma.scale or G.scale != mu.scale:
        raise ValidationError("scale mismatch")
    mu_x = mu.to_exact() if not mu.exact else mu
    sg_x = sigma.to_exact() if not sigma.exact else sigma
    w0 = mu_x.weights[0]
    if any(w != w0 for w in mu_x.weights):
        fw = mu.float_weights()
        if np.max(np.abs(fw - fw[0])) > 1e-12 * fw[0]:
            raise ValidationError("mu must have constant density on its support")
        mu_x = DeltaMeasure(mu.scale, mu.indices, [Fraction(1) * w0] * len(mu))
    d = 1
    wp = _lookup(mu_x, G.pairs[:, :d])
    wq = _lookup(sg_x, G.pairs[:, d:])
    c = sum((a * b for a, b in zip(wp, wq)), Fraction(0))
    if c == 0:
        raise ValidationError("good-pair set has zero mass")
    Z = np.unique(G.pairs[:, 0] + G.pairs[:, 1])
    C = Fraction(len(Z), len(mu_x))
    lhs = l2sh_norm_sq(convolve(mu_x, sg_x))
    rhs = c * c / C * l2sh_norm_sq(mu_x)
    return L2BoundReport(c, C, lhs, rhs, bool(lhs >= rhs))
