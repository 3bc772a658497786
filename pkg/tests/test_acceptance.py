"""Acceptance criteria, one test each, each printing a single PASS/FAIL line."""

import json
import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from flatlab.curve import parabola
from flatlab.experiments import GoodPairSet, capture_counting_experiment, l2_lower_bound_check, minimal_capture_set
from flatlab.grid import CellSet, Direction, Scale, transversality_check
from flatlab.measure import (
    DeltaMeasure,
    atom,
    builtin_measure,
    coarsen,
    convolve,
    l2sh_norm,
    l2sh_norm_sq,
    lift_to_curve,
    self_convolution_power,
    uniform,
)
from flatlab.perfectness import PerfectnessQuery, frostman_check, frostman_constant, frostman_exponent, scan_perfectness
from flatlab.spectral import flattening_iteration, fourier_energy_bridge, is_nonincreasing, j_sequence, lp_profile, parseval_integral, riesz_energy
from flatlab.uniformize import extract_uniform, verify_uniform

FIXTURES = Path(__file__).parent / "fixtures"

pytestmark = pytest.mark.acceptance


def random_measure(rng, m, n, dim=1):
    idx = rng.integers(0, 1 << m, (n, dim))
    w = rng.random(n) + 0.05
    return DeltaMeasure(Scale(m, dim), idx, w / w.sum())


def test_criterion_1_exact_identities(verdict):
    t0 = time.perf_counter()
    norms_ok = all(l2sh_norm_sq(uniform(Scale(11), range(N), exact=True)) == Fraction(1, N) for N in (1 << k for k in range(11)))
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(50):
        nu = random_measure(rng, int(rng.integers(4, 11)), int(rng.integers(1, 60)))
        worst = max(worst, abs(parseval_integral(nu) / float(l2sh_norm_sq(nu)) - 1))
    half = uniform(Scale(4), [0, 1], exact=True)
    qhq = convolve(half, half)
    conv_ok = qhq.as_dict() == {(0,): Fraction(1, 4), (1,): Fraction(1, 2), (2,): Fraction(1, 4)}
    n = 5
    tri = self_convolution_power(uniform(Scale(6), range(n), exact=True), 2)
    conv_ok &= tri.as_dict() == {(k,): Fraction(min(k + 1, 2 * n - 1 - k), n * n) for k in range(2 * n - 1)}
    elapsed = time.perf_counter() - t0
    ok = norms_ok and worst <= 1e-6 and conv_ok and elapsed < 10
    verdict(1, ok, f"uniform norms exact={norms_ok}, Parseval worst rel err {worst:.2e} (tol 1e-6), convolution examples exact={conv_ok}, {elapsed:.1f}s (< 10s)")
    assert ok


def test_criterion_2_inequality_suite(verdict):
    t0 = time.perf_counter()
    l2_ok = 0
    for i in range(200):
        rng = np.random.default_rng([202, i])
        sc = Scale(7)
        mu = uniform(sc, rng.choice(128, int(rng.integers(1, 20)), replace=False), exact=True)
        k = int(rng.integers(1, 15))
        raw = rng.integers(1, 10, k)
        sigma = DeltaMeasure(sc, rng.choice(128, k, replace=False).reshape(-1, 1), [Fraction(int(r), int(raw.sum())) for r in raw])
        pairs = np.array([[p, q] for p in mu.indices.ravel() for q in sigma.indices.ravel()])
        keep = rng.random(len(pairs)) < rng.uniform(0.1, 1.0)
        keep[int(rng.integers(len(pairs)))] = True
        l2_ok += l2_lower_bound_check(mu, sigma, GoodPairSet.from_pairs(mu, sigma, pairs[keep])).ok
    tr_ok = 0
    for i in range(200):
        rng = np.random.default_rng([203, i])
        Y = CellSet(Scale(6, 2), rng.integers(0, 64, (int(rng.integers(1, 200)), 2)))
        a1, a2 = rng.uniform(0, np.pi, 2)
        tr_ok += transversality_check(Y, Direction(a1), Direction(a2), C_T=8).bound_ok
    sw_ok = 0
    for i in range(100):
        rng = np.random.default_rng([204, i])
        T = int(rng.integers(2, 6))
        rho = random_measure(rng, 12, int(rng.integers(1, 200)))
        n, nc = l2sh_norm(rho), l2sh_norm(coarsen(rho, Scale(12 - (T - 1))))
        sw_ok += n <= nc * (1 + 1e-12) and nc <= 2 ** ((T - 1) / 2) * n * (1 + 1e-12)
    j_ok = 0
    for i in range(20):
        rng = np.random.default_rng([205, i])
        mu = random_measure(rng, 5, int(rng.integers(2, 30)), 2)
        sigma = random_measure(rng, 5, int(rng.integers(2, 30)), 2)
        j_ok += is_nonincreasing(j_sequence(mu, sigma, 0.1, 3))
    elapsed = time.perf_counter() - t0
    ok = l2_ok == 200 and tr_ok == 200 and sw_ok == 100 and j_ok == 20 and elapsed < 120
    verdict(2, ok, f"L2 lower bound {l2_ok}/200, transversality C_T=8 {tr_ok}/200, coarsening sandwich {sw_ok}/100, J monotone {j_ok}/20, {elapsed:.1f}s (< 120s)")
    assert ok


def test_criterion_3_perfectness(verdict):
    t0 = time.perf_counter()
    leb = builtin_measure("lebesgue", Scale(10))
    beta = scan_perfectness(leb, PerfectnessQuery(2)).best_beta
    beta_ok = abs(beta - 2 / 3) <= 0.02
    cantor = builtin_measure("cantor4", Scale(10))
    rep = scan_perfectness(cantor, PerfectnessQuery(16))
    s = frostman_exponent(16, rep.best_beta)
    C = frostman_constant(16, s, rep.diam_support)
    fr = frostman_check(cantor, s, C, D=16)
    elapsed = time.perf_counter() - t0
    ok = beta_ok and fr.ok and elapsed < 60
    verdict(3, ok, f"Lebesgue D=2 best_beta {beta:.4f} vs 2/3 +- 0.02 ({'ok' if beta_ok else 'out of band'}), Cantor-4 Frostman chain at beta={rep.best_beta:.4f} s={s:.4f} C={C:.3f}: {'ok' if fr.ok else 'fails'} (worst ratio {fr.worst_ratio:.3f}), {elapsed:.1f}s (< 60s)")
    assert ok


def test_criterion_4_energy_oracle(verdict):
    value = riesz_energy(builtin_measure("lebesgue", Scale(10)), 0.5, Scale(10), "kernel")
    rel = abs(value / (8 / 3) - 1)
    atom_ok = True
    for m in (4, 8, 12):
        for a in (0.25, 0.5, 1.0):
            atom_ok &= riesz_energy(atom(Scale(m)), a, Scale(m), "kernel") == (2.0 ** m) ** a
    ok = rel <= 0.03 and atom_ok
    verdict(4, ok, f"Lebesgue alpha=1/2 kernel energy {value:.5f} vs 8/3, rel err {rel:.4f} (tol 0.03), atom energy = delta^-alpha exactly: {atom_ok}")
    assert ok


def test_criterion_5_uniformizer(verdict):
    t0 = time.perf_counter()
    good = 0
    for i in range(50):
        rng = np.random.default_rng([505, i])
        P = CellSet(Scale(8, 2), rng.integers(0, 256, (500, 2)))
        rep = extract_uniform(P, 2, 4, 0.2)
        recs_ok = all(verify_uniform(r.cells, 2, 4).branching == r.branching for r in rep.records)
        parts = [r.cells.cells for r in rep.records] + [rep.remainder.cells]
        stacked = np.vstack(parts)
        partition_ok = len(stacked) == len(P) and np.array_equal(np.unique(stacked, axis=0), P.cells)
        again = extract_uniform(P, 2, 4, 0.2)
        det_ok = json.dumps(rep.to_json(), sort_keys=True) == json.dumps(again.to_json(), sort_keys=True)
        good += recs_ok and partition_ok and det_ok
    elapsed = time.perf_counter() - t0
    ok = good == 50 and elapsed < 30
    verdict(5, ok, f"{good}/50 inputs with uniform records, exact partition and byte-identical reruns, {elapsed:.1f}s (< 30s)")
    assert ok


def test_criterion_6_flattening_trend(verdict):
    t0 = time.perf_counter()
    sigma = lift_to_curve(builtin_measure("cantor4", Scale(10)), parabola())
    prof = flattening_iteration(sigma, 1.5, [10], ks=[1, 2, 4])
    kappas = prof.kappas(10)
    a_ok = prof.strictly_decreasing(10)
    Rs = [16, 32, 64, 128, 256, 512]
    slopes = lp_profile(sigma, [2, 8], Rs).slopes
    b_ok = slopes[8] < slopes[2]
    ctrl = lp_profile(atom(Scale(10, 2), [0, 0]), [2, 8], Rs).slopes
    c_ok = all(abs(ctrl[p] / 2 - 1) <= 0.05 for p in (2, 8))
    elapsed = time.perf_counter() - t0
    ok = a_ok and b_ok and c_ok
    verdict(6, ok, f"(a) kappa k=1,2,4: {', '.join(f'{k:.4f}' for k in kappas)} strictly decreasing={a_ok}; (b) slope p=8 {slopes[8]:.4f} < p=2 {slopes[2]:.4f}: {b_ok}; (c) atom slopes {ctrl[2]:.4f}, {ctrl[8]:.4f} within 5% of 2: {c_ok}; {elapsed:.1f}s")
    assert ok


def test_criterion_7_bridge(verdict):
    fx = json.loads((FIXTURES / "bridge_cantor4_p4.json").read_text())
    sigma = lift_to_curve(builtin_measure("cantor4", Scale(10)), parabola())
    rep = fourier_energy_bridge(sigma, fx["p"], [r["R"] for r in fx["rows"]], u=fx["u"], h=fx["h"])
    ratios = [r["ratio"] for r in rep.rows]
    in_band = all(0 < r <= 32 for r in ratios)
    matches = all(math.isclose(a, b["ratio"], rel_tol=1e-9) for a, b in zip(ratios, fx["rows"]))
    ok = in_band and matches
    verdict(7, ok, f"ratios over R={[int(r['R']) for r in rep.rows]}: min {min(ratios):.4f}, max {max(ratios):.4f}, inside (0, 32]={in_band}, matches archived fixture={matches}")
    assert ok


def test_criterion_8_capture_controls(verdict):
    t0 = time.perf_counter()
    fx = json.loads((FIXTURES / "experiments_cantor4.json").read_text())["capture"]
    sigma = lift_to_curve(builtin_measure("cantor4", Scale(14)), parabola())
    tab = capture_counting_experiment(sigma, sigma, 0.4, 0.05, range(8, 15), D=16, energy=False)
    fixture_ok = [r["E_size"] for r in tab.rows] == [r["E_size"] for r in fx["rows"]]
    ctrl = capture_counting_experiment(sigma, atom(Scale(14, 2), [0, 0]), 0.4, 0.05, range(8, 15), D=16, energy=False)
    ctrl_ok = ctrl.sigma_hypothesis["uniformly_perfect"] is False
    for r in ctrl.rows:
        mu_m = coarsen(sigma, Scale(r["m"], 2))
        ctrl_ok &= r["support_size"] == len(mu_m) and r["E_size"] == len(minimal_capture_set(mu_m, r["delta"] ** 0.05))
    elapsed = time.perf_counter() - t0
    ok = tab.all_pass and fixture_ok and ctrl_ok and elapsed < 600
    passes = sum(r["pass"] for r in tab.rows)
    verdict(8, ok, f"Cantor-4/Cantor-4 rows passing {passes}/{len(tab.rows)} at m=8..14 (fitted exponent {tab.fitted_exponent:.4f}, fixture match={fixture_ok}); atomic control flagged and adds no cells={ctrl_ok}; {elapsed:.1f}s (< 600s)")
    assert ok
