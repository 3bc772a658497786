"""Exact verification and greedy extraction of ``{2^{-jT}}``-uniform cell sets.

A cell set at scale ``2^{-mT}`` is uniform with branching ``(N_1, ..., N_m)``
when every ancestor ``Q`` at scale ``2^{-(j-1)T}`` contains exactly ``N_j``
descendants at scale ``2^{-jT}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .grid import CellSet

DEFAULT_ROUND_CAP = 10_000


@dataclass(frozen=True)
class UniformSetRecord:
    T: int
    m: int
    branching: tuple
    cells: CellSet

    def to_json(self) -> dict:
        return {
            "T": self.T,
            "m": self.m,
            "branching": list(self.branching),
            "size": len(self.cells),
            "cells": self.cells.cells.tolist(),
        }


@dataclass(frozen=True)
class UniformityResult:
    """Either ``branching`` (uniform) or a ``violation`` dict (not uniform)."""

    branching: tuple | None
    violation: dict | None = None

    @property
    def ok(self) -> bool:
        return self.violation is None


def _check_scale(cells: CellSet, T: int, m: int):
    if int(T) != T or T < 1 or int(m) != m or m < 1:
        raise ValidationError("T and m must be positive integers")
    if cells.scale.m != T * m:
        raise ValidationError(f"cell scale 2^-{cells.scale.m} differs from 2^-(m T) = 2^-{T * m}")


def _level(cells: np.ndarray, T: int, m: int, j: int) -> np.ndarray:
    """Ancestors at scale ``2^{-jT}`` of cells at scale ``2^{-mT}``."""
    return np.right_shift(cells, (m - j) * T)


def verify_uniform(cells: CellSet, T: int, m: int) -> UniformityResult:
    """Exact branching sequence, or the first violating ``(j, Q)`` in canonical order.

    Levels are scanned from ``j = 1``; within a level, ancestors ``Q`` are in
    lexicographic order and ``N_j`` is the count in the first one.
    """
    _check_scale(cells, T, m)
    if len(cells) == 0:
        raise ValidationError("empty cell set")
    out = []
    for j in range(1, m + 1):
        children = np.unique(_level(cells.cells, T, m, j), axis=0)
        parents, counts = np.unique(np.right_shift(children, T), axis=0, return_counts=True)
        bad = np.flatnonzero(counts != counts[0])
        if len(bad):
            b = int(bad[0])
            return UniformityResult(None, {
                "j": j,
                "Q": [int(v) for v in parents[b]],
                "count": int(counts[b]),
                "expected": int(counts[0]),
            })
        out.append(int(counts[0]))
    return UniformityResult(tuple(out))


def _spread_bits(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.uint64) & np.uint64(0xFFFFFFFF)
    for shift, mask in ((16, 0x0000FFFF0000FFFF), (8, 0x00FF00FF00FF00FF), (4, 0x0F0F0F0F0F0F0F0F), (2, 0x3333333333333333), (1, 0x5555555555555555)):
        v = (v | (v << np.uint64(shift))) & np.uint64(mask)
    return v


def morton_keys(cells: np.ndarray) -> np.ndarray:
    """Z-order keys of cells relative to the lexicographic minimum corner."""
    rel = cells - cells.min(axis=0)
    if rel.max(initial=0) >= 1 << 32:
        raise ValidationError("cell coordinates span more than 2^32")
    if cells.shape[1] == 1:
        return rel[:, 0].astype(np.uint64)
    return _spread_bits(rel[:, 0]) | (_spread_bits(rel[:, 1]) << np.uint64(1))


def branching_vectors(cells: np.ndarray, T: int, m: int) -> np.ndarray:
    """Per-cell ancestor child-counts ``(b_1, ..., b_m)`` within ``cells``."""
    out = np.empty((len(cells), m), dtype=np.int64)
    for j in range(1, m + 1):
        lvl = _level(cells, T, m, j)
        uniq, inv = np.unique(lvl, axis=0, return_inverse=True)
        _, pinv, pcounts = np.unique(np.right_shift(uniq, T), axis=0, return_inverse=True, return_counts=True)
        out[:, j - 1] = pcounts[pinv.ravel()][inv.ravel()]
    return out


def round_down_pow2(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.int64)
    return np.left_shift(1, np.floor(np.log2(np.maximum(v, 1))).astype(np.int64)).astype(np.int64)


def _trim(cells: np.ndarray, N: tuple, T: int, m: int):
    """Subset of ``cells`` with branching exactly ``N``, built bottom-up.

    At each level a parent survives when it has at least ``N_j`` surviving
    children; it keeps the ``N_j`` with the most class cells beneath (ties in
    Morton order). Returns ``(cells, None)`` on success and
    ``(empty, (j, best))`` when no parent survives level ``j``, where ``best``
    is the largest child count seen there.
    """
    kept = {}
    nodes = cells
    sizes = np.ones(len(cells), dtype=np.int64)
    for j in range(m, 0, -1):
        parents, pinv = np.unique(np.right_shift(nodes, T), axis=0, return_inverse=True)
        pinv = pinv.ravel()
        order = np.lexsort((morton_keys(nodes), -sizes, pinv))
        grp = pinv[order]
        starts = np.r_[0, np.flatnonzero(np.diff(grp)) + 1]
        counts = np.diff(np.r_[starts, len(grp)])
        rank = np.arange(len(grp)) - np.repeat(starts, counts)
        viable = counts >= N[j - 1]
        sel = order[(rank < N[j - 1]) & viable[grp]]
        kept[j] = nodes[sel]
        psizes = np.bincount(pinv, weights=sizes, minlength=len(parents)).astype(np.int64)
        nodes = parents[viable]
        sizes = psizes[viable]
        if not len(nodes):
            return np.zeros((0, cells.shape[1]), dtype=np.int64), (j, int(counts.max()))
    alive = nodes
    for j in range(1, m + 1):
        cand = kept[j]
        mask = _member(np.right_shift(cand, T), alive)
        alive = cand[mask]
    return alive, None


def _member(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if not len(b):
        return np.zeros(len(a), dtype=bool)
    both = np.vstack([a, b])
    lo = both.min(axis=0)
    span = both.max(axis=0) - lo + 1
    ka = np.ravel_multi_index(tuple((a - lo).T), tuple(span))
    kb = np.ravel_multi_index(tuple((b - lo).T), tuple(span))
    return np.isin(ka, kb)


@dataclass
class ExtractionReport:
    T: int
    m: int
    epsilon: float
    input_size: int
    records: list
    remainder: CellSet
    rounds: int
    partial: bool
    guarantees: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "T": self.T,
            "m": self.m,
            "epsilon": self.epsilon,
            "input_size": self.input_size,
            "rounds": self.rounds,
            "partial": self.partial,
            "guarantees": self.guarantees,
            "records": [r.to_json() for r in self.records],
            "remainder": self.remainder.cells.tolist(),
        }


def extract_uniform(P: CellSet, T: int, m: int, epsilon: float, round_cap: int = DEFAULT_ROUND_CAP) -> ExtractionReport:
    """Greedy decomposition of ``P`` into exactly uniform records plus a remainder.

    Each round computes every cell's rounded branching vector, takes the most
    popular class (ties: lexicographically smallest vector), trims it to an
    exactly uniform set and removes it. When no ancestor can supply ``N_j``
    children at some level, ``N_j`` drops to the largest power of 2 that is
    available there and the trim is repeated; ``(1, ..., 1)`` always succeeds.
    At least one round runs; rounds stop once
    ``|remainder| <= ceil(delta^eps |P|)`` or at ``round_cap``.
    """
    _check_scale(P, T, m)
    if len(P) == 0:
        raise ValidationError("cannot uniformize an empty set")
    if not epsilon > 0:
        raise ValidationError("epsilon must be positive")
    delta = P.scale.delta
    n0 = len(P)
    target = math.ceil(delta ** epsilon * n0)
    rem = P.cells
    records = []
    rounds = 0
    while len(rem) and (len(rem) > target or not rounds) and rounds < round_cap:
        rounds += 1
        vec = round_down_pow2(branching_vectors(rem, T, m))
        classes, inv, counts = np.unique(vec, axis=0, return_inverse=True, return_counts=True)
        inv = inv.ravel()
        # np.unique sorts classes lexicographically, so argmax picks the smallest vector on ties
        c = int(np.argmax(counts))
        members = rem[inv == c]
        N = [int(v) for v in classes[c]]
        while True:
            got, fail = _trim(members, tuple(N), T, m)
            if fail is None:
                break
            j, best = fail
            N[j - 1] = int(round_down_pow2(best))
        N = tuple(N)
        rec = CellSet(P.scale, got)
        check = verify_uniform(rec, T, m)
        if not check.ok or check.branching != N:
            raise AssertionError(f"trimmed record is not uniform: {check}")
        records.append(UniformSetRecord(int(T), int(m), N, rec))
        rem = rem[~_member(rem, rec.cells)]
    remainder = CellSet(P.scale, rem)
    floor_size = delta ** (2 * epsilon) * n0
    guarantees = {
        "record_size_floor": floor_size,
        "records_meet_floor": all(len(r.cells) >= floor_size for r in records),
        "remainder_cap": delta ** epsilon * n0,
        "remainder_ok": len(rem) <= delta ** epsilon * n0,
        "min_record_size": min((len(r.cells) for r in records), default=0),
        "remainder_size": int(len(rem)),
    }
    partial = len(rem) > target
    return ExtractionReport(int(T), int(m), float(epsilon), n0, records, remainder, rounds, partial, guarantees)
