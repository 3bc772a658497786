"""Fourier transforms, L^p ball averages and Riesz energies of delta-measures.

Conventions: ``sigma_hat(xi) = sum_z w_z exp(-2 pi i xi . z)``. Frequencies
are sampled on the lattice ``h Z^d`` intersected with the closed ball
``|xi| <= R``; integrals over the ball are Riemann sums with cell volume
``h^d``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np
from scipy.integrate import quad
from scipy.signal import fftconvolve

from . import _kernels
from .errors import BudgetError, HypothesisRejected, PropertyViolation, ValidationError
from .grid import Scale
from .measure import DeltaMeasure, coarsen, convolve

DEFAULT_H = 1.0 / 8.0
TILE_ROWS = 256
FIELD_BUDGET = 1 << 24
FFT_BUDGET = 1 << 22
MOLLIFIED_BUDGET = 1 << 20
PAIR_LIMIT = 60_000
KERNEL_FFT_BUDGET = 1 << 25
MONOTONE_RTOL = 1e-12


def _delta_value(delta) -> float:
    return delta.delta if isinstance(delta, Scale) else float(delta)


# ---------------------------------------------------------------------------
# mollifier


class Mollifier:
    """Radial bump ``psi(x) = c_d exp(-1/(1-|x|^2))`` on the unit ball.

    ``c_d`` is fixed by quadrature so that ``psi`` integrates to 1.
    """

    def __init__(self, dim: int):
        if dim not in (1, 2):
            raise ValidationError("mollifier dimension must be 1 or 2")
        self.dim = dim
        prof = lambda r: math.exp(-1.0 / (1.0 - r * r)) if r < 1 else 0.0
        if dim == 1:
            mass = 2 * quad(prof, 0, 1, epsabs=1e-15, epsrel=1e-13)[0]
            sq = 2 * quad(lambda r: prof(r) ** 2, 0, 1, epsabs=1e-15, epsrel=1e-13)[0]
        else:
            mass = quad(lambda r: 2 * math.pi * r * prof(r), 0, 1, epsabs=1e-15, epsrel=1e-13)[0]
            sq = quad(lambda r: 2 * math.pi * r * prof(r) ** 2, 0, 1, epsabs=1e-15, epsrel=1e-13)[0]
        self.c = 1.0 / mass
        self._l2 = self.c * math.sqrt(sq)

    def __call__(self, x) -> np.ndarray:
        """Evaluate ``psi`` at points of shape (..., d) (or (...) when d = 1)."""
        x = np.asarray(x, dtype=float)
        r2 = x * x if self.dim == 1 else (x * x).sum(axis=-1)
        out = np.zeros_like(r2)
        inside = r2 < 1
        out[inside] = self.c * np.exp(-1.0 / (1.0 - r2[inside]))
        return out

    def scaled(self, x, r: float) -> np.ndarray:
        """``psi_r(x) = r^{-d} psi(x / r)``."""
        return self(np.asarray(x, dtype=float) / r) / r ** self.dim

    def l2_norm(self, r: float = 1.0) -> float:
        """``||psi_r||_2 = r^{-d/2} ||psi||_2``."""
        return self._l2 * r ** (-self.dim / 2)

    def grid_kernel(self, r: float, step: float, normalize: bool = True) -> np.ndarray:
        """``psi_r`` sampled on ``step Z^d`` (a centered odd-sized array)."""
        n = int(math.ceil(r / step))
        ax = np.arange(-n, n + 1) * step
        if self.dim == 1:
            k = self.scaled(ax, r)
        else:
            X, Y = np.meshgrid(ax, ax, indexing="ij")
            k = self.scaled(np.stack([X, Y], -1), r)
        if normalize:
            k = k / (k.sum() * step ** self.dim)
        return k


# ---------------------------------------------------------------------------
# Fourier evaluation


def _modulus(h: float, delta: float):
    """Integer ``M`` with ``h * delta = 1/M`` when it exists."""
    q = Fraction(h).limit_denominator(1 << 40) * Fraction(delta)
    if q.numerator == 1 and float(q) == h * delta:
        return q.denominator
    return None


def _phases(k: np.ndarray, n: np.ndarray, h: float, delta: float) -> np.ndarray:
    """``exp(-2 pi i h delta k n)`` as an outer product (len(k), len(n))."""
    M = _modulus(h, delta)
    if M is not None:
        frac = np.mod(np.multiply.outer(k.astype(np.int64), n.astype(np.int64)), M) / M
    else:
        frac = np.mod(np.multiply.outer(k * h, n * delta), 1.0)
    return np.exp(-2j * np.pi * frac)


def _check_spacing(sigma: DeltaMeasure, h: float):
    diam = sigma.diameter()
    if h <= 0:
        raise ValidationError("lattice spacing must be positive")
    if diam > 0 and h > 1.0 / (4.0 * diam) * (1 + 1e-12):
        raise ValidationError(f"spacing h={h} is too coarse for support diameter {diam:.4g} (need h <= 1/(4 diam))")


def _field_blocks(sigma: DeltaMeasure, h: float, R: float):
    """Yield ``(r2, F)`` tiles covering the square ``|k_i| h <= R``.

    ``r2`` holds ``|xi|^2`` for the tile and ``F`` the transform values.
    """
    K = int(math.floor(R / h + 1e-12))
    k = np.arange(-K, K + 1)
    w = sigma.float_weights()
    delta = sigma.delta
    if sigma.dim == 1:
        n = sigma.indices[:, 0]
        for s in range(0, len(k), TILE_ROWS * 16):
            kb = k[s:s + TILE_ROWS * 16]
            yield (kb * h) ** 2, _phases(kb, n, h, delta) @ w
        return
    nx, ny = sigma.indices[:, 0], sigma.indices[:, 1]
    Ey = _phases(k, ny, h, delta)
    xi2 = (k * h) ** 2
    for s in range(0, len(k), TILE_ROWS):
        kb = k[s:s + TILE_ROWS]
        Ex = _phases(kb, nx, h, delta) * w
        yield xi2[s:s + TILE_ROWS, None] + xi2[None, :], Ex @ Ey.T


@dataclass
class FourierField:
    """Samples of ``sigma_hat`` on ``h Z^d`` within the closed ball ``B(R)``."""

    h: float
    R: float
    k: np.ndarray  # (P, d) integer lattice coordinates
    values: np.ndarray  # (P,) complex

    @property
    def xi(self) -> np.ndarray:
        return self.k * self.h

    def at(self, k) -> complex:
        key = np.asarray(k, dtype=np.int64).reshape(1, -1)
        hit = np.flatnonzero(np.all(self.k == key, axis=1))
        if not len(hit):
            raise KeyError(k)
        return complex(self.values[hit[0]])


def _ball_lattice(h: float, R: float, dim: int) -> np.ndarray:
    K = int(math.floor(R / h + 1e-12))
    ax = np.arange(-K, K + 1)
    if dim == 1:
        return ax.reshape(-1, 1)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], 1)
    return pts[(pts * pts).sum(1) * h * h <= R * R * (1 + 1e-12)]


def fourier_points(sigma: DeltaMeasure, xi: np.ndarray) -> np.ndarray:
    """Direct evaluation of ``sigma_hat`` at arbitrary frequencies (P, d)."""
    xi = np.asarray(xi, dtype=float).reshape(-1, sigma.dim)
    pos = sigma.positions()
    w = sigma.float_weights()
    out = np.empty(len(xi), dtype=complex)
    step = max(1, (1 << 22) // max(len(pos), 1))
    for s in range(0, len(xi), step):
        ph = np.mod(xi[s:s + step] @ pos.T, 1.0)
        out[s:s + step] = np.exp(-2j * np.pi * ph) @ w
    return out


def fourier_eval(sigma: DeltaMeasure, h: float = DEFAULT_H, R: float = 1.0, backend: str = "auto") -> FourierField:
    """Sample ``sigma_hat`` on ``h Z^d cap B(R)``.

    Backends: ``"direct"`` sums exponentials per frequency, ``"separable"``
    factorizes the planar exponential into a matrix product, ``"fft"`` uses a
    length-``M`` DFT when ``h * delta = 1/M``.
    """
    _check_spacing(sigma, h)
    pts = _ball_lattice(h, R, sigma.dim)
    if len(pts) > FIELD_BUDGET:
        raise BudgetError(f"{len(pts)} lattice points exceed the field budget; use lp_profile for streaming sums")
    M = _modulus(h, sigma.delta)
    if backend == "auto":
        backend = "fft" if (M is not None and M ** sigma.dim <= FFT_BUDGET) else "separable"
    if backend == "direct":
        vals = _direct_on_lattice(sigma, pts, h)
    elif backend == "separable":
        vals = _separable_on_lattice(sigma, pts, h)
    elif backend == "fft":
        if M is None or M ** sigma.dim > FFT_BUDGET:
            raise BudgetError("fft backend needs h*delta = 1/M with M^d within the FFT budget")
        grid = np.zeros((M,) * sigma.dim)
        np.add.at(grid, tuple(np.mod(sigma.indices, M).T), sigma.float_weights())
        F = np.fft.fftn(grid)
        vals = F[tuple(np.mod(pts, M).T)]
    else:
        raise ValidationError(f"unknown backend {backend!r}")
    return FourierField(h, R, pts, vals)


def _direct_on_lattice(sigma, pts, h):
    M = _modulus(h, sigma.delta)
    w = sigma.float_weights()
    out = np.empty(len(pts), dtype=complex)
    step = max(1, (1 << 22) // len(sigma))
    for s in range(0, len(pts), step):
        kk = pts[s:s + step].astype(np.int64)
        if M is not None:
            frac = np.mod(kk @ sigma.indices.T, M) / M
        else:
            frac = np.mod((kk * h) @ sigma.positions().T, 1.0)
        out[s:s + step] = np.exp(-2j * np.pi * frac) @ w
    return out


def _separable_on_lattice(sigma, pts, h):
    if sigma.dim == 1:
        return _phases(pts[:, 0], sigma.indices[:, 0], h, sigma.delta) @ sigma.float_weights()
    K = int(np.abs(pts).max()) if len(pts) else 0
    k = np.arange(-K, K + 1)
    Ex = _phases(k, sigma.indices[:, 0], h, sigma.delta) * sigma.float_weights()
    Ey = _phases(k, sigma.indices[:, 1], h, sigma.delta)
    F = Ex @ Ey.T
    return F[pts[:, 0] + K, pts[:, 1] + K]


def parseval_integral(nu: DeltaMeasure, samples: int | None = None) -> float:
    """``delta * int_0^{1/delta} |nu_hat|^2`` for a 1D measure.

    ``|nu_hat|^2`` is a trigonometric polynomial of period ``1/delta`` whose
    degree is below the index span, so an equispaced rule with more nodes
    than twice the span integrates it exactly.
    """
    if nu.dim != 1:
        raise ValidationError("the Parseval bridge is stated for 1D measures")
    span = int(nu.indices.max() - nu.indices.min())
    M = samples or 1 << max(4, (2 * span + 2).bit_length())
    h = 1.0 / (nu.delta * M)
    vals = fourier_points(nu, (np.arange(M) * h).reshape(-1, 1))
    return float(nu.delta * h * np.sum(np.abs(vals) ** 2))


# ---------------------------------------------------------------------------
# L^p ball averages


@dataclass
class FourierProfile:
    """Rows ``(p, R, lp_avg)`` with least-squares log-log slopes per ``p``."""

    h: float
    rows: list
    sup_abs: dict = field(default_factory=dict)

    def value(self, p: int, R: float) -> float:
        for row in self.rows:
            if row["p"] == p and row["R"] == R:
                return row["lp_avg"]
        raise KeyError((p, R))

    @cached_property
    def slopes(self) -> dict:
        out = {}
        for p in sorted({r["p"] for r in self.rows}):
            sel = [r for r in self.rows if r["p"] == p]
            if len(sel) >= 2:
                x = np.log([r["R"] for r in sel])
                y = np.log([r["lp_avg"] for r in sel])
                out[p] = float(np.polyfit(x, y, 1)[0])
        return out


def _check_p(p):
    if int(p) != p or p < 2 or p % 2:
        raise ValidationError(f"p must be an even integer >= 2, got {p}")


def lp_profile(sigma: DeltaMeasure, ps, Rs, h: float = DEFAULT_H) -> FourierProfile:
    """``h^d sum_{|xi| <= R} |sigma_hat(xi)|^p`` for every ``p`` in ``ps`` and ``R`` in ``Rs``.

    One streaming pass over the field serves all parameter pairs.
    """
    ps = [int(p) for p in ps]
    Rs = sorted(float(R) for R in Rs)
    for p in ps:
        _check_p(p)
    if not Rs or Rs[0] < 1:
        raise ValidationError("radii must be >= 1")
    _check_spacing(sigma, h)
    parts = {(p, R): [] for p in ps for R in Rs}
    sup = {R: 0.0 for R in Rs}
    for r2, F in _field_blocks(sigma, h, Rs[-1]):
        a2 = F.real ** 2 + F.imag ** 2
        for R in Rs:
            sel = a2[r2 <= R * R * (1 + 1e-12)]
            if sel.size:
                sup[R] = max(sup[R], math.sqrt(float(sel.max())))
            for p in ps:
                parts[(p, R)].append(float(np.sum(sel ** (p // 2))))
    vol = h ** sigma.dim
    rows = [
        {"p": p, "R": R, "lp_avg": math.fsum(parts[(p, R)]) * vol, "h": h}
        for p in ps
        for R in Rs
    ]
    return FourierProfile(h, rows, sup)


def lp_ball_average(sigma: DeltaMeasure, p: int, R: float, h: float = DEFAULT_H) -> float:
    """Riemann sum of ``|sigma_hat|^p`` over ``B(R)``."""
    return lp_profile(sigma, [p], [R], h).rows[0]["lp_avg"]


# ---------------------------------------------------------------------------
# Riesz energies


def _cell_self_energy(alpha: float, dim: int) -> float:
    """Mean of ``|x - y|^{-alpha}`` over ``x, y`` in the unit cube."""
    if dim == 1:
        return 2.0 / ((1 - alpha) * (2 - alpha))

    def inner(th):
        c, s = math.cos(th), math.sin(th)
        L = 1.0 / c
        return L ** (2 - alpha) / (2 - alpha) - (c + s) * L ** (3 - alpha) / (3 - alpha) + c * s * L ** (4 - alpha) / (4 - alpha)

    return 8.0 * quad(inner, 0, math.pi / 4, epsabs=1e-13, epsrel=1e-12)[0]


def _kernel_energy(mu: DeltaMeasure, alpha: float, delta: float) -> float:
    w = mu.float_weights()
    floor_units = delta / mu.delta
    n = len(mu)
    if n <= PAIR_LIMIT:
        return _kernels.pair_energy(mu.indices, w, floor_units, alpha) * mu.delta ** (-alpha)
    lo = mu.indices.min(axis=0)
    span = mu.indices.max(axis=0) - lo + 1
    if int(np.prod(2 * span)) > KERNEL_FFT_BUDGET:
        raise BudgetError(f"kernel energy for {n} atoms over a {tuple(span)} box exceeds the budget")
    f = np.zeros(tuple(span))
    f[tuple((mu.indices - lo).T)] = w
    axes = [np.arange(-(s - 1), s) for s in span]
    mesh = np.meshgrid(*axes, indexing="ij")
    d2 = sum(a.astype(float) ** 2 for a in mesh)
    K = np.maximum(d2, floor_units ** 2) ** (-alpha / 2)
    conv = fftconvolve(f, K, mode="valid")
    return float(np.sum(f * conv)) * mu.delta ** (-alpha)


def _mollified_energy(mu: DeltaMeasure, alpha: float, delta: float) -> float:
    d = mu.dim
    g = delta / 4
    moll = Mollifier(d)
    kern = moll.grid_kernel(delta, g)
    pad = kern.shape[0] // 2
    cells = np.rint(mu.positions() / g).astype(np.int64)
    lo = cells.min(axis=0) - pad
    span = cells.max(axis=0) + pad - lo + 1
    if int(np.prod(2 * span)) > MOLLIFIED_BUDGET:
        raise BudgetError("mollified energy refused above its size budget; use the kernel method")
    grid = np.zeros(tuple(span))
    np.add.at(grid, tuple((cells - lo).T), mu.float_weights())
    f = fftconvolve(grid, kern, mode="same")
    axes = [np.arange(-(s - 1), s) for s in span]
    mesh = np.meshgrid(*axes, indexing="ij")
    dist = np.sqrt(sum(a.astype(float) ** 2 for a in mesh)) * g
    K = np.empty_like(dist)
    nz = dist > 0
    K[nz] = dist[nz] ** (-alpha)
    K[~nz] = _cell_self_energy(alpha, d) * g ** (-alpha)
    conv = fftconvolve(f, K, mode="valid")
    return float(np.sum(f * conv)) * g ** (2 * d)


def _fourier_energy(mu: DeltaMeasure, alpha: float, delta: float, h: float) -> float:
    d = mu.dim
    R = 1.0 / delta
    parts = []
    for r2, F in _field_blocks(mu, h, R):
        a2 = F.real ** 2 + F.imag ** 2
        sel = (r2 <= R * R * (1 + 1e-12)) & (r2 > 0)
        parts.append(float(np.sum(a2[sel] * r2[sel] ** ((alpha - d) / 2))))
    total = math.fsum(parts) * h ** d
    # the origin cell is integrated against |xi|^{alpha-d} over a ball of equal volume
    if d == 1:
        origin = 2 * (h / 2) ** alpha / alpha
    else:
        origin = 2 * math.pi * (h / math.sqrt(math.pi)) ** alpha / alpha
    return total + float(mu.total_mass) ** 2 * origin


def riesz_energy(mu: DeltaMeasure, alpha: float, delta, method: str = "kernel", h: float = DEFAULT_H) -> float:
    """Regularized ``alpha``-energy of ``mu`` at resolution ``delta``.

    ``kernel``: ``sum mu(z) mu(z') max(|z - z'|, delta)^{-alpha}``; finite
    for every ``alpha`` in (0, 2). The other methods need ``alpha < d``.
    ``mollified``: Riemann sum of the energy of ``mu * psi_delta`` on a
    ``delta/4`` grid (small inputs only).
    ``fourier``: ``int_{B(1/delta)} |mu_hat|^2 |xi|^{alpha - d}`` without the
    normalizing constant (trend comparisons only).
    """
    if not 0 < alpha < 2:
        raise ValidationError(f"alpha must lie in (0, 2), got {alpha}")
    if method != "kernel" and alpha >= mu.dim:
        raise ValidationError(f"method {method!r} needs alpha < {mu.dim}")
    dv = _delta_value(delta)
    if dv <= 0:
        raise ValidationError("delta must be positive")
    if method == "kernel":
        return _kernel_energy(mu, float(alpha), dv)
    if method == "mollified":
        return _mollified_energy(mu, float(alpha), dv)
    if method == "fourier":
        return _fourier_energy(mu, float(alpha), dv, h)
    raise ValidationError(f"unknown energy method {method!r}")


# ---------------------------------------------------------------------------
# J sequence


def _mollified_l2(nu: DeltaMeasure, r: float, step: float, kern: np.ndarray) -> float:
    ratio = nu.delta / step
    mult = int(round(ratio))
    if abs(mult - ratio) > 1e-12 or mult < 1:
        raise ValidationError("grid step must divide the lattice spacing")
    cells = nu.indices * mult
    lo = cells.min(axis=0)
    span = cells.max(axis=0) - lo + 1
    if int(np.prod(span + np.array(kern.shape) - 1)) > FIELD_BUDGET:
        raise BudgetError("mollified grid exceeds the field budget")
    grid = np.zeros(tuple(span))
    grid[tuple((cells - lo).T)] = nu.float_weights()
    f = fftconvolve(grid, kern)
    return math.sqrt(float(np.sum(f * f)) * step ** nu.dim)


def j_sequence(mu: DeltaMeasure, sigma: DeltaMeasure, r: float, k_max: int, step: float | None = None) -> list:
    """``J_r(k) = ||(mu * sigma)^{*2^k} * psi_r||_2`` for ``k = 0..k_max``.

    The mollified function is sampled on a dyadic grid of spacing ``step``
    (default: the largest dyadic divisor of ``delta`` not exceeding ``r/8``),
    and the norm is a Riemann sum. Raises :class:`PropertyViolation` if the
    sequence increases beyond rounding.
    """
    if mu.scale != sigma.scale:
        raise ValidationError("mu and sigma must share the scale")
    if r <= 0 or k_max < 0:
        raise ValidationError("need r > 0 and k_max >= 0")
    if step is None:
        step = mu.delta
        while step > r / 8:
            step /= 2
    moll = Mollifier(mu.dim)
    kern = moll.grid_kernel(r, step, normalize=False)
    nu = convolve(mu, sigma)
    out = []
    for k in range(k_max + 1):
        if k:
            nu = convolve(nu, nu)
        out.append(_mollified_l2(nu, r, step, kern))
    for a, b in zip(out, out[1:]):
        if b > a * (1 + MONOTONE_RTOL):
            raise PropertyViolation(f"J sequence increased: {a} -> {b}")
    return out


def is_nonincreasing(seq, rtol: float = MONOTONE_RTOL) -> bool:
    return all(b <= a * (1 + rtol) for a, b in zip(seq, seq[1:]))


# ---------------------------------------------------------------------------
# flattening iteration


@dataclass
class EnergyProfile:
    """Rows ``(alpha, delta, m, k, method, value, kappa)``."""

    rows: list

    def kappa(self, m: int, k: int) -> float:
        for row in self.rows:
            if row["m"] == m and row["k"] == k:
                return row["kappa"]
        raise KeyError((m, k))

    def kappas(self, m: int) -> list:
        return [row["kappa"] for row in sorted((r for r in self.rows if r["m"] == m), key=lambda r: r["k"])]

    def nonincreasing(self, m: int) -> bool:
        ks = self.kappas(m)
        return all(b <= a for a, b in zip(ks, ks[1:]))

    def strictly_decreasing(self, m: int) -> bool:
        ks = self.kappas(m)
        return all(b < a for a, b in zip(ks, ks[1:]))


def _powers(sigma: DeltaMeasure, ks):
    """``sigma^{*k}`` for each requested ``k`` by incremental convolution."""
    out = {}
    cur = sigma
    top = max(ks)
    for k in range(1, top + 1):
        if k > 1:
            cur = convolve(cur, sigma)
        if k in ks:
            out[k] = cur
    return out


def flattening_iteration(sigma: DeltaMeasure, t: float, scales=None, k_max: int = 4, ks=None) -> EnergyProfile:
    """Tabulate ``I_t^delta(sigma^{*k})`` and ``kappa = log I / log(1/delta)``.

    ``scales`` lists resolutions as :class:`Scale` objects or exponents ``m``
    (default: the native scale); ``sigma`` is coarsened to each before
    convolving. ``ks`` defaults to ``1..k_max``.
    """
    if not 0 < t < sigma.dim:
        raise ValidationError(f"t must lie in (0, {sigma.dim})")
    if abs(float(sigma.total_mass) - 1) > 1e-9:
        raise ValidationError("flattening expects a probability measure")
    if np.abs(sigma.positions()).max() > 2:
        raise ValidationError("support must lie in [-2, 2]^d")
    if scales is None:
        scales = [sigma.scale.m]
    elif isinstance(scales, (Scale, int)):
        scales = [scales]
    ms = sorted({s.m if isinstance(s, Scale) else int(s) for s in scales})
    ks = sorted({int(k) for k in (range(1, k_max + 1) if ks is None else ks)})
    if not ks or ks[0] < 1:
        raise ValidationError("k values must be positive")
    rows = []
    for m in ms:
        base = coarsen(sigma, Scale(m, sigma.dim))
        delta = base.delta
        for k, power in _powers(base, ks).items():
            val = riesz_energy(power, t, delta, "kernel")
            rows.append({
                "alpha": float(t),
                "delta": delta,
                "m": m,
                "k": k,
                "method": "kernel",
                "atoms": len(power),
                "value": val,
                "kappa": math.log(val) / math.log(1.0 / delta),
            })
    return EnergyProfile(rows)


# ---------------------------------------------------------------------------
# Fourier-energy bridge


@dataclass
class BridgeReport:
    p: int
    u: float
    h: float
    rows: list  # dicts with R, lhs, rhs, ratio

    @property
    def max_ratio(self) -> float:
        return max(r["ratio"] for r in self.rows)

    @property
    def min_ratio(self) -> float:
        return min(r["ratio"] for r in self.rows)


def fourier_energy_bridge(sigma: DeltaMeasure, p: int, Rs, u: float | None = None, epsilon: float = 0.1, h: float = DEFAULT_H) -> BridgeReport:
    """Compare ``||sigma_hat||_{L^p(B(R))}^p`` with ``R^{2-u} I_u^{1/R}(sigma^{*p/2})``.

    ``u`` defaults to ``2 - epsilon/2``.
    """
    if u is None:
        u = 2 - epsilon / 2
    _check_p(p)
    if sigma.dim != 2:
        raise ValidationError("the bridge is stated for planar measures")
    if not 0 < u < 2:
        raise ValidationError("u must lie in (0, 2)")
    Rs = sorted(float(R) for R in Rs)
    prof = lp_profile(sigma, [p], Rs, h)
    power = _powers(sigma, [p // 2])[p // 2]
    rows = []
    for R in Rs:
        lhs = prof.value(p, R)
        rhs = R ** (2 - u) * riesz_energy(power, u, 1.0 / R, "kernel")
        rows.append({"R": R, "lhs": lhs, "rhs": rhs, "ratio": lhs / rhs})
    return BridgeReport(int(p), float(u), h, rows)


# ---------------------------------------------------------------------------
# band-limited verifier


@dataclass
class SpectralSamples:
    """Values of ``f_hat`` on ``h Z^d``; ``values`` is a centered (2K+1)^d array."""

    h: float
    values: np.ndarray

    @property
    def K(self) -> int:
        return (self.values.shape[0] - 1) // 2

    @property
    def dim(self) -> int:
        return self.values.ndim

    def radii_sq(self) -> np.ndarray:
        ax = (np.arange(self.values.shape[0]) - self.K) * self.h
        if self.dim == 1:
            return ax ** 2
        return ax[:, None] ** 2 + ax[None, :] ** 2


def _ball_mask(h: float, R: float, dim: int) -> tuple[np.ndarray, int]:
    K = int(math.floor(R / h + 1e-12))
    ax = (np.arange(2 * K + 1) - K) * h
    r2 = ax ** 2 if dim == 1 else ax[:, None] ** 2 + ax[None, :] ** 2
    return r2 <= R * R * (1 + 1e-12), K


def ball_indicator_spectrum(h: float, R: float, dim: int = 2) -> SpectralSamples:
    mask, _ = _ball_mask(h, R, dim)
    return SpectralSamples(h, mask.astype(complex))


def random_spectrum(h: float, R: float, dim: int = 2, seed: int = 0, bumps: int = 8, phases: bool = False) -> SpectralSamples:
    """Random band-limited spectrum on the ball lattice, zero outside.

    By default ``f_hat = 1_{B(R)} sum_j a_j e^{-2 pi i xi . x_j}`` with
    ``bumps`` random weights ``a_j`` in ``[1/2, 3/2]`` and centers ``x_j`` in
    ``[-1/2, 1/2)^d``, so ``f`` is a sum of translated ball kernels and stays
    concentrated. ``phases=True`` draws independent complex Gaussians per
    sample instead; those spread ``f`` over the whole torus.
    """
    mask, K = _ball_mask(h, R, dim)
    rng = np.random.default_rng(seed)
    if phases:
        vals = rng.standard_normal(mask.shape) + 1j * rng.standard_normal(mask.shape)
        return SpectralSamples(h, np.where(mask, vals, 0))
    a = rng.uniform(0.5, 1.5, bumps)
    x = rng.uniform(-0.5, 0.5, (bumps, dim))
    ax = (np.arange(2 * K + 1) - K) * h
    vals = np.zeros(mask.shape, dtype=complex)
    for aj, xj in zip(a, x):
        e = [np.exp(-2j * np.pi * ax * xj[i]) for i in range(dim)]
        vals += aj * (e[0] if dim == 1 else np.multiply.outer(e[0], e[1]))
    return SpectralSamples(h, np.where(mask, vals, 0))


def point_spectrum(h: float, R: float, dim: int = 2, at=None) -> SpectralSamples:
    mask, K = _ball_mask(h, R, dim)
    vals = np.zeros(mask.shape, dtype=complex)
    where = (K,) * dim if at is None else tuple(int(a) + K for a in at)
    vals[where] = 1.0
    return SpectralSamples(h, vals)


@dataclass
class BandLimitedReport:
    R: float
    p: int
    epsilon: float
    l1: float
    l2: float
    spreading: float
    lhs: float
    holder: float
    interpolation: float
    young_bound: float
    chain_ok: bool
    ratio: float
    kappa: float


def band_limited_flattening(f_hat: SpectralSamples, sigma: DeltaMeasure, epsilon: float, p: int, R: float | None = None) -> BandLimitedReport:
    """Evaluate the Holder chain bounding ``||f * sigma||_2`` for band-limited ``f``.

    ``f`` lives on the torus of side ``1/h`` dual to the sampling lattice.
    The chain is::

        int |f_hat|^2 |sigma_hat|^2
          <= (int |f_hat|^{2q'})^{1/q'} ||sigma_hat||_p^2            (Holder)
          <= sup|f_hat|^{2-2/q'} ||f||_2^{2/q'} ||sigma_hat||_p^2    (interpolation)
          <= ||f||_1^{2-2/q'} ||f||_2^{2/q'} ||sigma_hat||_p^2       (sup|f_hat| <= ||f||_1)

    with ``q' = p/(p-2)``. Raises :class:`HypothesisRejected` when
    ``||f||_2 < R^eps ||f||_1``.
    """
    _check_p(p)
    h = f_hat.h
    d = f_hat.dim
    if d != sigma.dim:
        raise ValidationError("spectrum and measure dimensions differ")
    _check_spacing(sigma, h)
    r2 = f_hat.radii_sq()
    nz = np.abs(f_hat.values) > 0
    if R is None:
        R = max(math.sqrt(float(r2[nz].max())), 1.0) if nz.any() else 1.0
    if R < 1:
        raise ValidationError("R must be at least 1")
    if np.any(nz & (r2 > R * R * (1 + 1e-12))):
        raise ValidationError("f_hat is not supported in B(R)")
    if not nz.any():
        raise ValidationError("f_hat vanishes identically")
    vol = h ** d
    fh = f_hat.values
    M = fh.shape[0]
    # f on the torus: f(j/(M h)) = h^d sum_k f_hat_k e^{2 pi i k j / M}
    f = np.fft.ifftn(np.fft.ifftshift(fh)) * (M ** d) * vol
    cell = (1.0 / (M * h)) ** d
    l1 = float(np.sum(np.abs(f))) * cell
    l2 = math.sqrt(float(np.sum(np.abs(fh) ** 2)) * vol)
    spreading = l2 / l1
    if spreading < R ** epsilon:
        raise HypothesisRejected(
            f"spreading hypothesis fails: ||f||_2/||f||_1 = {spreading:.4g} < R^eps = {R ** epsilon:.4g}"
        )
    # sigma_hat on the same square lattice, streamed in tiles
    a_f2 = np.abs(fh) ** 2
    lhs_parts, sig_parts = [], []
    row = 0
    for rr, F in _field_blocks(sigma, h, f_hat.K * h):
        s2 = F.real ** 2 + F.imag ** 2
        n = s2.shape[0] if d == 2 else len(s2)
        fa = a_f2[row:row + n]
        lhs_parts.append(float(np.sum(fa * s2)))
        inside = rr <= R * R * (1 + 1e-12)
        sig_parts.append(float(np.sum(s2[inside] ** (p // 2))))
        row += n
    lhs = math.fsum(lhs_parts) * vol
    sig_p = math.fsum(sig_parts) * vol
    sig_norm2 = sig_p ** (2.0 / p)
    sup_f = float(np.abs(fh).max())
    if p == 2:
        holder = sup_f ** 2 * sig_norm2
        interp = holder
        young = l1 ** 2 * sig_norm2
    else:
        qp = p / (p - 2)
        holder = (float(np.sum(np.abs(fh) ** (2 * qp))) * vol) ** (1 / qp) * sig_norm2
        interp = sup_f ** (2 - 2 / qp) * l2 ** (2 / qp) * sig_norm2
        young = l1 ** (2 - 2 / qp) * l2 ** (2 / qp) * sig_norm2
    tol = 1e-9
    chain_ok = lhs <= holder * (1 + tol) and holder <= interp * (1 + tol)
    ratio = math.sqrt(lhs) / l2
    kappa = -math.log(ratio) / math.log(R)
    return BandLimitedReport(float(R), int(p), float(epsilon), l1, l2, spreading, lhs, holder, interp, young, chain_ok, ratio, kappa)
