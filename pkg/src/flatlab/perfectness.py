"""Uniform perfectness scans and Frostman checks for delta-measures.

A measure is ``(D, beta, U)``-uniformly perfect at resolution ``delta`` when
``sigma(B(x, r)) <= beta * sigma(B(x, D r))`` for every admissible ball:
``r >= delta``, ``B(x, D r)`` inside ``U`` and ``spt sigma`` not inside
``B(x, D r)``.

For a delta-measure the ratio is piecewise constant in ``r`` with jumps at
atom distances ``d`` and at ``d / D``. The scan evaluates every such
breakpoint (plus a geometric grid with ratio 9/8) for both closed and open
balls, so the supremum it reports is exact over ``r >= r_min``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AtomicSupportError, BudgetError, ValidationError
from .measure import DeltaMeasure, Window, support_diameter

GRID_RATIO = 9.0 / 8.0
MAX_CENTERS = 200_000


@dataclass(frozen=True)
class PerfectnessQuery:
    """Parameters of a scan. ``r_min`` is absolute; ``None`` means ``delta``."""

    D: float
    window: Window | None = None
    r_min: float | None = None
    centers_mode: str = "support"

    def __post_init__(self):
        if not self.D > 1:
            raise ValidationError(f"D must exceed 1, got {self.D}")
        if self.centers_mode not in ("support", "grid"):
            raise ValidationError("centers_mode must be 'support' or 'grid'")
        if self.r_min is not None and self.r_min <= 0:
            raise ValidationError("r_min must be positive")


@dataclass(frozen=True)
class Witness:
    center: tuple
    center_position: tuple
    radius: float
    variant: str  # "closed" or "open"
    ratio: float


@dataclass(frozen=True)
class PerfectnessReport:
    best_beta: float
    witness: Witness
    tested_ball_count: int
    diam_support: float
    D: float
    r_min: float
    grid_ratio: float = GRID_RATIO
    centers_mode: str = "support"
    window: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "best_beta": self.best_beta,
            "witness": {
                "center": list(self.witness.center),
                "center_position": list(self.witness.center_position),
                "radius": self.witness.radius,
                "variant": self.witness.variant,
                "ratio": self.witness.ratio,
            },
            "tested_ball_count": self.tested_ball_count,
            "diam_support": self.diam_support,
            "D": self.D,
            "r_min": self.r_min,
            "grid_ratio": self.grid_ratio,
            "centers_mode": self.centers_mode,
            "window": self.window,
        }


def _centers(sigma: DeltaMeasure, mode: str) -> np.ndarray:
    if mode == "support":
        return sigma.indices
    lo = sigma.indices.min(axis=0)
    hi = sigma.indices.max(axis=0)
    count = int(np.prod(hi - lo + 1))
    if count > MAX_CENTERS:
        raise BudgetError(f"all-grid centers would need {count} centers (limit {MAX_CENTERS})")
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, sigma.dim)


def _window_limits(center: np.ndarray, window: Window | None, scale_delta: float, D: float):
    """Largest admissible ``r`` (index units) for ``B(x, D r)`` inside the window.

    Returns ``(limit, strict)``; ``strict`` is True when the bound comes from
    a half-open upper face and must not be attained.
    """
    if window is None:
        return math.inf, False
    x = center.astype(float) * scale_delta
    lo = np.array(window.lo)
    hi = np.array(window.hi)
    if np.any(x < lo) or np.any(x >= hi):
        return -math.inf, False
    low_side = float(np.min((x - lo) / D)) / scale_delta
    high_side = float(np.min((hi - x) / D)) / scale_delta
    if high_side <= low_side:
        return high_side, True
    return low_side, False


def _radius_candidates(dist: np.ndarray, D: float, r_min: float, r_top: float) -> np.ndarray:
    n_geo = int(math.floor(math.log(max(r_top / r_min, 1.0)) / math.log(GRID_RATIO))) + 1
    geo = r_min * GRID_RATIO ** np.arange(n_geo)
    cand = np.concatenate([[r_min], geo, dist, dist / D])
    cand = cand[(cand >= r_min) & (cand <= r_top)]
    return np.unique(cand)


def _ball_masses(sorted_d: np.ndarray, cum: np.ndarray, r: np.ndarray, closed: bool) -> np.ndarray:
    side = "right" if closed else "left"
    pos = np.searchsorted(sorted_d, r, side=side)
    return np.where(pos > 0, cum[np.maximum(pos - 1, 0)], 0.0)


def _distances(indices: np.ndarray, center: np.ndarray) -> np.ndarray:
    diff = (indices - center).astype(float)
    if diff.shape[1] == 1:
        return np.abs(diff[:, 0])
    return np.sqrt((diff * diff).sum(axis=1))


def scan_perfectness(sigma: DeltaMeasure, q: PerfectnessQuery) -> PerfectnessReport:
    """Supremum of ``sigma(B(x,r)) / sigma(B(x,Dr))`` over admissible balls.

    Raises
    ------
    AtomicSupportError
        If the support is a single point.
    ValidationError
        If the window misses the support or no ball is admissible.
    """
    if len(sigma) < 2:
        raise AtomicSupportError("support has diameter 0; uniform perfectness needs diam(spt sigma) > 0")
    delta = sigma.delta
    D = float(q.D)
    r_min_abs = delta if q.r_min is None else float(q.r_min)
    if r_min_abs < delta * (1 - 1e-12):
        raise ValidationError("r_min must be at least delta")
    r_min = r_min_abs / delta
    window = q.window
    if window is not None:
        if window.dim != sigma.dim:
            raise ValidationError("window dimension differs from the measure")
        if not window.contains(sigma.positions()).any():
            raise ValidationError("window does not meet the support")
    diam = support_diameter(sigma.indices)
    w = sigma.float_weights()
    centers = _centers(sigma, q.centers_mode)

    best = -1.0
    witness = None
    tested = 0
    for ci, c in enumerate(centers):
        dist = _distances(sigma.indices, c)
        order = np.argsort(dist, kind="stable")
        sd = dist[order]
        cum = np.cumsum(w[order])
        dmax = float(sd[-1])
        limit, strict = _window_limits(c, window, delta, D)
        r_top = min(diam * D, limit)
        if r_top < r_min:
            continue
        r = _radius_candidates(np.unique(sd), D, r_min, r_top)
        if strict:
            r = r[r < limit]
        if not len(r):
            continue
        for variant, closed in (("closed", True), ("open", False)):
            num = _ball_masses(sd, cum, r, closed)
            den = _ball_masses(sd, cum, D * r, closed)
            adm = (dmax > D * r) if closed else (dmax >= D * r)
            adm &= den > 0
            tested += int(adm.sum())
            if not adm.any():
                continue
            ratio = np.where(adm, num / np.where(den > 0, den, 1.0), -1.0)
            j = int(np.argmax(ratio))
            val = float(ratio[j])
            better = val > best or (
                witness is not None and val == best and ci == witness[0] and r[j] < witness[1]
            )
            if better:
                best = val
                witness = (ci, float(r[j]), variant)
    if witness is None:
        raise ValidationError("no admissible ball: enlarge the window or lower r_min")
    ci, rr, variant = witness
    center = tuple(int(v) for v in centers[ci])
    wit = Witness(center, tuple(float(v) * delta for v in center), rr * delta, variant, best)
    return PerfectnessReport(
        best_beta=best,
        witness=wit,
        tested_ball_count=tested,
        diam_support=diam * delta,
        D=D,
        r_min=r_min_abs,
        centers_mode=q.centers_mode,
        window={} if window is None else window.to_json(),
    )


def ball_ratio(sigma: DeltaMeasure, center, radius: float, D: float, variant: str = "closed") -> float:
    """Re-evaluate ``sigma(B(x, r)) / sigma(B(x, D r))`` for one ball."""
    c = np.asarray(center, dtype=np.int64)
    dist = _distances(sigma.indices, c) * sigma.delta
    w = sigma.float_weights()
    if variant == "closed":
        num, den = w[dist <= radius].sum(), w[dist <= D * radius].sum()
    else:
        num, den = w[dist < radius].sum(), w[dist < D * radius].sum()
    return float(num / den)


def frostman_exponent(D: float, beta: float) -> float:
    """``s = -log(beta) / log(D)``."""
    if not D > 1:
        raise ValidationError("D must exceed 1")
    if not 0 < beta < 1:
        raise ValidationError("beta must lie in (0, 1)")
    return -math.log(beta) / math.log(D)


def frostman_constant(D: float, s: float, diam: float) -> float:
    """Constant ``(2D)^s diam^{-s}`` produced by the perfectness-to-Frostman chain."""
    return (2 * D) ** s * diam ** (-s)


@dataclass(frozen=True)
class FrostmanReport:
    ok: bool
    worst_ratio: float
    witness: tuple
    s: float
    C: float
    tested_ball_count: int


def frostman_check(sigma: DeltaMeasure, s: float, C: float, D: float = 2.0, r_min: float | None = None, centers_mode: str = "support") -> FrostmanReport:
    """Check ``sigma(B(x, r)) <= C r^s`` on the scan's center/radius grid.

    ``D`` only shapes the radius grid (breakpoints ``d`` and ``d/D`` up to
    ``diam * D``). Closed balls are used: they dominate open ones at every
    radius.
    """
    if not s > 0:
        raise ValidationError("s must be positive")
    delta = sigma.delta
    r_min_u = 1.0 if r_min is None else float(r_min) / delta
    diam = max(support_diameter(sigma.indices), 1.0)
    w = sigma.float_weights()
    worst = -1.0
    wit = None
    tested = 0
    for ci, c in enumerate(_centers(sigma, centers_mode)):
        dist = _distances(sigma.indices, c)
        order = np.argsort(dist, kind="stable")
        sd = dist[order]
        cum = np.cumsum(w[order])
        r = _radius_candidates(np.unique(sd), D, r_min_u, diam * D)
        mass = _ball_masses(sd, cum, r, True)
        ratio = mass / (r * delta) ** s
        tested += len(r)
        j = int(np.argmax(ratio))
        if ratio[j] > worst:
            worst = float(ratio[j])
            wit = (tuple(int(v) for v in c), float(r[j] * delta))
    return FrostmanReport(bool(worst <= C * (1 + 1e-12)), worst, wit, float(s), float(C), tested)
