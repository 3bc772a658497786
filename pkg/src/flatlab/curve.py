"""Strictly convex C^2 graphs ``{(x, phi(x)) : x in [-1, 1]}``.

Curves carry sampled certificates for ``phi''``: a lower bound (convexity
margin) and an upper bound ``M``. Both are taken over 2^12 points of
``[-2, 2]`` and widened by a declared Lipschitz modulus of ``phi''``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError
from .grid import Direction
from .measure import DeltaMeasure

CERT_SAMPLES = 1 << 12
FD_SAMPLES = 1 << 10
FD_RTOL = 1e-4
CONTAINMENT_SCALES = tuple(range(8, 17))
CONTAINMENT_ANCHORS = 64
OVERLAP_LIMIT = 9


@dataclass(frozen=True)
class CurveSpec:
    """Graph curve with evaluators and certified bounds on ``phi''``.

    Parameters
    ----------
    name : str
        Label used in reports.
    phi, dphi, ddphi : callable
        Vectorized evaluators of ``phi`` and its first two derivatives.
    modulus : float
        Declared Lipschitz constant of ``phi''``; the sampled extremes of
        ``phi''`` are widened by ``modulus * h / 2`` (``h`` the sample gap).
    phi_exact : callable, optional
        Evaluator accepting ``Fraction`` input, used by exact-mode lifts.
    """

    name: str
    phi: Callable
    dphi: Callable
    ddphi: Callable
    modulus: float = 0.0
    phi_exact: Callable | None = None
    convexity_margin: float = field(init=False)
    second_derivative_sup: float = field(init=False)

    def __post_init__(self):
        xs = np.linspace(-2.0, 2.0, CERT_SAMPLES)
        h = xs[1] - xs[0]
        dd = np.asarray(self.ddphi(xs), dtype=float) * np.ones_like(xs)
        slack = float(self.modulus) * h / 2
        margin = float(dd.min()) - slack
        sup = float(dd.max()) + slack
        if not np.all(np.isfinite(dd)):
            raise ValidationError(f"curve {self.name}: phi'' is not finite on [-2, 2]")
        if margin <= 0:
            raise ValidationError(f"curve {self.name}: convexity margin {margin:.3g} is not positive")
        _check_derivative(self.phi, self.dphi, f"curve {self.name}: phi'")
        _check_derivative(self.dphi, self.ddphi, f"curve {self.name}: phi''")
        object.__setattr__(self, "convexity_margin", margin)
        object.__setattr__(self, "second_derivative_sup", sup)

    def point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.stack([x, np.asarray(self.phi(x), dtype=float) * np.ones_like(x)], axis=-1)

    def certificate(self) -> dict:
        return {
            "name": self.name,
            "convexity_margin": self.convexity_margin,
            "second_derivative_sup": self.second_derivative_sup,
            "samples": CERT_SAMPLES,
            "modulus": float(self.modulus),
        }


def _check_derivative(f, df, label):
    xs = np.linspace(-2.0, 2.0, FD_SAMPLES)
    h = 1e-5
    fd = (np.asarray(f(xs + h), dtype=float) - np.asarray(f(xs - h), dtype=float)) / (2 * h)
    ref = np.asarray(df(xs), dtype=float) * np.ones_like(xs)
    err = np.abs(fd - ref) / np.maximum(1.0, np.abs(ref))
    if float(err.max()) > FD_RTOL:
        raise ValidationError(f"{label} disagrees with finite differences (relative error {err.max():.2e})")


def parabola() -> CurveSpec:
    return CurveSpec(
        "parabola",
        lambda x: x * x,
        lambda x: 2 * x,
        lambda x: 2.0 * np.ones_like(np.asarray(x, dtype=float)),
        phi_exact=lambda x: x * x,
    )


def halfparabola() -> CurveSpec:
    return CurveSpec(
        "halfparabola",
        lambda x: x * x / 2,
        lambda x: x,
        lambda x: np.ones_like(np.asarray(x, dtype=float)),
        phi_exact=lambda x: x * x / 2,
    )


BUILTIN_CURVES = {"parabola": parabola, "halfparabola": halfparabola}


def builtin_curve(name: str) -> CurveSpec:
    try:
        return BUILTIN_CURVES[name]()
    except KeyError:
        raise ValidationError(f"unknown curve {name!r}; choose from {sorted(BUILTIN_CURVES)}") from None


def piecewise_polynomial_curve(name: str, breakpoints: Sequence[float], coefficients: Sequence[Sequence[float]], modulus: float | None = None) -> CurveSpec:
    """Curve from polynomial pieces ``sum_k c_k x^k`` on ``[b_i, b_{i+1})``.

    The pieces must cover ``[-2, 2]``. When ``modulus`` is omitted it is
    taken as the sampled maximum of ``|phi'''|`` over the pieces.
    """
    bps = np.asarray(breakpoints, dtype=float)
    if len(bps) != len(coefficients) + 1 or np.any(np.diff(bps) <= 0):
        raise ValidationError("need increasing breakpoints and one coefficient list per piece")
    if bps[0] > -2 or bps[-1] < 2:
        raise ValidationError("pieces must cover [-2, 2]")
    polys = [np.polynomial.Polynomial(np.asarray(c, dtype=float)) for c in coefficients]
    ders = [[p.deriv(k) for p in polys] for k in range(4)]

    def make(k):
        def ev(x):
            x = np.asarray(x, dtype=float)
            piece = np.clip(np.searchsorted(bps, x, side="right") - 1, 0, len(polys) - 1)
            out = np.empty_like(x)
            for i, p in enumerate(ders[k]):
                sel = piece == i
                out[sel] = p(x[sel])
            return out

        return ev

    if modulus is None:
        xs = np.linspace(-2.0, 2.0, CERT_SAMPLES)
        modulus = float(np.abs(make(3)(xs)).max())
    return CurveSpec(name, make(0), make(1), make(2), modulus=modulus)


def flatness_constant(curve: CurveSpec, verify: bool = True) -> float:
    """Radius factor ``c`` with ``curve cap B(z, c*Delta)`` inside the tangent rectangle.

    Starts from ``min(1, 1/sqrt(2M))`` and, when ``verify`` is set, shrinks it
    until the sampled containment check passes.
    """
    M = curve.second_derivative_sup
    if not math.isfinite(M) or M <= 0:
        raise ValidationError("curve has no certified second-derivative bound")
    c = min(1.0, 1.0 / math.sqrt(2.0 * M))
    if verify:
        for _ in range(64):
            if verify_containment(curve, c).ok:
                break
            c *= 0.9
        else:
            raise ValidationError("containment could not be verified for any tested c")
    return c


@dataclass(frozen=True)
class TangentFrame:
    """Tangent/normal frame of the curve at ``x_theta``.

    The associated rectangle ``R(theta)`` at resolution ``(delta, Delta)`` is
    ``{|tangent coordinate| <= Delta, |normal coordinate| <= delta/2}``
    around the curve point.
    """

    x_theta: float
    point: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray

    @property
    def direction(self) -> Direction:
        """Direction of the normal line; ``pi_theta`` projects onto it."""
        return Direction.from_vector(self.normal)

    def project(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.normal

    def coordinates(self, points) -> tuple[np.ndarray, np.ndarray]:
        rel = np.asarray(points, dtype=float) - self.point
        return rel @ self.tangent, rel @ self.normal

    def in_rectangle(self, points, delta: float, Delta: float) -> np.ndarray:
        t, n = self.coordinates(points)
        return (np.abs(t) <= Delta * (1 + 1e-12)) & (np.abs(n) <= delta / 2 * (1 + 1e-12))


def tangent_projection(curve: CurveSpec, x_theta: float) -> TangentFrame:
    if not -1.0 <= x_theta <= 1.0:
        raise ValidationError("anchor must lie in [-1, 1]")
    slope = float(curve.dphi(np.array([x_theta]))[0])
    t = np.array([1.0, slope]) / math.hypot(1.0, slope)
    n = np.array([-t[1], t[0]])
    return TangentFrame(float(x_theta), curve.point(np.array([x_theta]))[0], t, n)


@dataclass(frozen=True)
class ContainmentReport:
    ok: bool
    c: float
    worst_tangent: float
    worst_normal: float
    samples: int


def verify_containment(curve: CurveSpec, c: float, scales=CONTAINMENT_SCALES, anchors: int = CONTAINMENT_ANCHORS, per_anchor: int = 513) -> ContainmentReport:
    """Sample curve points within ``c*Delta`` of each anchor and test ``R(theta)`` membership.

    ``worst_tangent`` and ``worst_normal`` are the largest coordinates seen,
    relative to their allowances ``Delta`` and ``delta/2``.
    """
    xa = np.linspace(-1.0, 1.0, anchors)
    s = np.linspace(-1.0, 1.0, per_anchor)
    worst_t = worst_n = 0.0
    count = 0
    for m in scales:
        delta = math.ldexp(1.0, -m)
        Delta = math.sqrt(delta)
        rad = c * Delta
        for a in xa:
            frame = tangent_projection(curve, a)
            x = np.clip(a + rad * s, -1.0, 1.0)
            pts = curve.point(x)
            near = np.linalg.norm(pts - frame.point, axis=1) <= rad
            t, n = frame.coordinates(pts[near])
            count += int(near.sum())
            if near.any():
                worst_t = max(worst_t, float(np.abs(t).max()) / Delta)
                worst_n = max(worst_n, float(np.abs(n).max()) / (delta / 2))
    ok = worst_t <= 1 + 1e-12 and worst_n <= 1 + 1e-12
    return ContainmentReport(ok, c, worst_t, worst_n, count)


@dataclass
class CoverReport:
    """Greedy ball cover of a lifted support."""

    centers: np.ndarray
    radius: float
    c: float
    A: float
    overlap_max: int
    overlap_ok: bool
    covered: bool
    diameter_violations: list
    separation_min: float

    @property
    def ok(self) -> bool:
        return self.overlap_ok and self.covered and not self.diameter_violations

    def __len__(self):
        return len(self.centers)


def curve_cover(sigma: DeltaMeasure, Delta: float, D: float, curve: CurveSpec, c: float | None = None) -> CoverReport:
    """Cover ``spt sigma`` by balls ``B(y, c*Delta)`` around a separated subset.

    Centers are chosen greedily in ascending abscissa order among support
    atoms, keeping an atom iff it is at least ``c*Delta/2`` from all earlier
    centers. The report lists balls whose support diameter falls below
    ``c*Delta/D`` and the maximal overlap multiplicity on the support. The
    caller is responsible for having scanned ``sigma`` at parameter ``D``.
    """
    if sigma.dim != 2:
        raise ValidationError("curve covers need a planar measure")
    if D <= 1:
        raise ValidationError("D must exceed 1")
    if c is None:
        c = flatness_constant(curve)
    Delta = float(Delta)
    rad = c * Delta
    pts = sigma.positions()
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    chosen: list[int] = []
    for i in order:
        if chosen:
            d = np.linalg.norm(pts[chosen] - pts[i], axis=1)
            if d.min() < rad / 2:
                continue
        chosen.append(int(i))
    centers = pts[chosen]
    dist = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=2)
    inside = dist <= rad
    multiplicity = inside.sum(axis=1)
    violations = []
    for b in range(len(centers)):
        member = pts[inside[:, b]]
        diff = member[:, None, :] - member[None, :, :]
        diam = float(np.sqrt((diff ** 2).sum(-1)).max()) if len(member) > 1 else 0.0
        if diam < rad / D:
            violations.append({"ball": b, "center": centers[b].tolist(), "diameter": diam})
    if len(centers) > 1:
        cd = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2)
        sep = float(cd[np.triu_indices(len(centers), 1)].min())
    else:
        sep = math.inf
    overlap = int(multiplicity.max())
    return CoverReport(
        centers=centers,
        radius=rad,
        c=c,
        A=10.0 / c,
        overlap_max=overlap,
        overlap_ok=overlap <= OVERLAP_LIMIT,
        covered=bool(np.all(multiplicity >= 1)),
        diameter_violations=violations,
        separation_min=sep,
    )
