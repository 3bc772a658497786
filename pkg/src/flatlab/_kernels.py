"""Compiled pair-sum kernels.

Each row's partial sum is written to its own slot and the slots are reduced
serially afterwards, so results do not depend on the thread count.
"""

import os

import numba
import numpy as np

if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


@numba.njit(parallel=True, cache=True)
def _row_energies(idx, w, floor_sq, half_alpha):
    n = idx.shape[0]
    d = idx.shape[1]
    rows = np.zeros(n)
    self_k = floor_sq ** (-half_alpha)
    for i in numba.prange(n):
        acc = 0.0
        for j in range(i + 1, n):
            d2 = 0.0
            for a in range(d):
                t = idx[j, a] - idx[i, a]
                d2 += t * t
            if d2 < floor_sq:
                d2 = floor_sq
            acc += w[j] * d2 ** (-half_alpha)
        rows[i] = w[i] * (2.0 * acc + w[i] * self_k)
    return rows


def pair_energy(idx: np.ndarray, w: np.ndarray, floor_units: float, alpha: float) -> float:
    """``sum_{i,j} w_i w_j max(|z_i - z_j|, floor)^{-alpha}`` in index units."""
    rows = _row_energies(np.ascontiguousarray(idx, dtype=np.float64), np.ascontiguousarray(w, dtype=np.float64), float(floor_units) ** 2, 0.5 * float(alpha))
    return float(np.sum(rows))


def set_threads(n: int):
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


@numba.njit(parallel=True, cache=True)
def _point_sums(a_rel, wa, gb, targets):
    n = targets.shape[0]
    d = a_rel.shape[1]
    out = np.zeros(n)
    for s in numba.prange(n):
        acc = 0.0
        for i in range(a_rel.shape[0]):
            flat = 0
            ok = True
            for c in range(d):
                t = targets[s, c] - a_rel[i, c]
                if t < 0 or t >= gb.shape[c]:
                    ok = False
                    break
            if ok:
                if d == 1:
                    v = gb[targets[s, 0] - a_rel[i, 0], 0]
                else:
                    v = gb[targets[s, 0] - a_rel[i, 0], targets[s, 1] - a_rel[i, 1]]
                acc += wa[i] * v
        out[s] = acc
    return out


def convolution_at(a_rel: np.ndarray, wa: np.ndarray, gb: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """``sum_i wa_i gb[z - a_i]`` at each target ``z`` (1D or 2D, box-relative indices)."""
    g = gb.reshape(-1, 1) if gb.ndim == 1 else gb
    return _point_sums(np.ascontiguousarray(a_rel, dtype=np.int64), np.ascontiguousarray(wa, dtype=np.float64), np.ascontiguousarray(g, dtype=np.float64), np.ascontiguousarray(targets, dtype=np.int64))
