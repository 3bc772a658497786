import itertools
import json
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flatlab.curve import parabola, tangent_projection
from flatlab.errors import ValidationError
from flatlab.experiments import (
    GoodPairSet,
    capture_counting_experiment,
    l2_lower_bound_check,
    minimal_capture_set,
    row_structure,
    sumset_growth_experiment,
)
from flatlab.grid import CellSet, Scale, cell_sumset
from flatlab.measure import DeltaMeasure, atom, builtin_measure, convolve, l2sh_norm_sq, lift_to_curve, uniform
from flatlab.perfectness import PerfectnessQuery, frostman_exponent, scan_perfectness
from flatlab.uniformize import UniformSetRecord, extract_uniform

FIXTURE = json.loads((Path(__file__).parent / "fixtures" / "experiments_cantor4.json").read_text())


@pytest.fixture(scope="module")
def lifted14():
    return lift_to_curve(builtin_measure("cantor4", Scale(14)), parabola())


@pytest.fixture(scope="module")
def lifted12():
    return lift_to_curve(builtin_measure("cantor4", Scale(12)), parabola())


# -- minimal capture sets


def test_capture_full_mass_is_full_support():
    mu = builtin_measure("cantor4", Scale(8))
    E = minimal_capture_set(mu, mu.total_mass)
    assert np.array_equal(E.cells, mu.indices)


@pytest.mark.parametrize("k", [1, 3, 7, 10])
def test_capture_uniform_counts(k):
    mu = uniform(Scale(6), range(10), exact=True)
    assert len(minimal_capture_set(mu, Fraction(k, 10))) == k
    assert len(minimal_capture_set(mu.to_float(), k / 10)) == k


def test_capture_ties_in_index_order():
    mu = uniform(Scale(6), [9, 2, 5, 7])
    assert minimal_capture_set(mu, 0.5).cells.ravel().tolist() == [2, 5]


def test_capture_target_range():
    mu = uniform(Scale(4), range(4))
    with pytest.raises(ValidationError):
        minimal_capture_set(mu, 1.5)
    with pytest.raises(ValidationError):
        minimal_capture_set(mu, 0.0)


def brute_capture(weights, target):
    n = len(weights)
    for k in range(1, n + 1):
        if any(sum(c) >= target for c in itertools.combinations(weights, k)):
            return k
    raise AssertionError


@pytest.mark.parametrize("seed", range(25))
def test_capture_matches_exhaustive_oracle(seed):
    rng = np.random.default_rng([11, seed])
    n = int(rng.integers(1, 17))
    raw = rng.integers(1, 20, n).tolist()
    total = sum(raw)
    w = [Fraction(r, total) for r in raw]
    mu = DeltaMeasure(Scale(6), rng.choice(64, n, replace=False).reshape(-1, 1), w)
    target = Fraction(int(rng.integers(1, total + 1)), total)
    got = minimal_capture_set(mu, target)
    assert len(got) == brute_capture(list(mu.weights), target)
    assert sum(mu.weights[np.searchsorted(mu.indices.ravel(), got.cells.ravel())]) >= target


@given(st.lists(st.integers(1, 30), min_size=1, max_size=30), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_capture_monotone_in_target(raw, a, b):
    w = np.array(raw, dtype=float)
    mu = DeltaMeasure(Scale(6), np.arange(len(raw)).reshape(-1, 1), w / w.sum())
    lo, hi = sorted((a, b))
    assert len(minimal_capture_set(mu, lo)) <= len(minimal_capture_set(mu, hi))


# -- capture counting


def test_capture_fixture(lifted14):
    fx = FIXTURE["capture"]
    tab = capture_counting_experiment(lifted14, lifted14, fx["alpha"], fx["epsilon"], range(8, 15), D=fx["D"], energy=False)
    assert tab.all_pass
    assert [{k: r[k] for k in ("m", "E_size", "support_size")} for r in tab.rows] == fx["rows"]
    assert tab.fitted_exponent == pytest.approx(fx["fitted_exponent"], rel=1e-12)
    assert tab.sigma_hypothesis["uniformly_perfect"]


def test_capture_energy_column(lifted14):
    tab = capture_counting_experiment(lifted14, lifted14, 0.4, 0.05, [8, 10], D=16)
    assert all(r["energy"] > 0 for r in tab.rows)
    assert all(isinstance(r["energy_hypothesis"], bool) for r in tab.rows)


def test_capture_atomic_control(lifted14):
    # convolving with an atom adds no cells: the table only sees mu
    sigma = atom(Scale(14, 2), [0, 0])
    tab = capture_counting_experiment(lifted14, sigma, 0.4, 0.05, range(8, 15), D=16, energy=False)
    assert tab.sigma_hypothesis["uniformly_perfect"] is False
    assert "diameter 0" in tab.sigma_hypothesis["reason"]
    from flatlab.measure import coarsen

    for r in tab.rows:
        mu_m = coarsen(lifted14, Scale(r["m"], 2))
        assert r["support_size"] == len(mu_m)
        assert r["E_size"] == len(minimal_capture_set(mu_m, r["delta"] ** 0.05))


def test_capture_atomic_control_fails_for_atomic_mu():
    a = atom(Scale(10, 2), [3, 3])
    tab = capture_counting_experiment(a, a, 0.4, 0.05, [6, 8, 10], D=16, energy=False)
    assert not any(r["pass"] for r in tab.rows)
    assert all(r["E_size"] == 1 for r in tab.rows)


def test_capture_fitted_exponent_tracks_dimension(lifted12):
    fitted, frostman = [], []
    for name in ["cantor8", "cantor4", "cantor3", "lebesgue"]:
        mu = lift_to_curve(builtin_measure(name, Scale(12)), parabola())
        tab = capture_counting_experiment(mu, lifted12, 0.4, 0.05, range(6, 13), D=16, energy=False)
        fitted.append(tab.fitted_exponent)
        beta = scan_perfectness(builtin_measure(name, Scale(12)), PerfectnessQuery(16)).best_beta
        frostman.append(frostman_exponent(16, beta))
    assert frostman == sorted(frostman)
    assert fitted == sorted(fitted)


@given(st.floats(0.1, 0.9), st.floats(0.1, 0.9))
def test_capture_alpha_monotone(a, b):
    mu = lift_to_curve(builtin_measure("cantor4", Scale(10)), parabola())
    lo, hi = sorted((a, b))
    t_lo = capture_counting_experiment(mu, mu, lo, 0.05, [6, 8], energy=False)
    t_hi = capture_counting_experiment(mu, mu, hi, 0.05, [6, 8], energy=False)
    for r_lo, r_hi in zip(t_lo.rows, t_hi.rows):
        assert not (r_hi["pass"] and not r_lo["pass"])


def test_capture_validation(lifted12):
    with pytest.raises(ValidationError):
        capture_counting_experiment(lifted12, lifted12, 0.4, 0.05, [13])
    with pytest.raises(ValidationError):
        capture_counting_experiment(lifted12, lifted12, 0.4, 0.05, [])


# -- sumset growth


def test_growth_single_cell(lifted12):
    sc = Scale(12, 2)
    X = UniformSetRecord(3, 4, (1, 1, 1, 1), CellSet(sc, [[100, 200]]))
    g = sumset_growth_experiment(X, lifted12)
    # a sum of two delta-cells meets the 2 x 2 block at the sum of their corners
    block = {(100 + a + i, 200 + b + j) for a, b in lifted12.indices.tolist() for i in (0, 1) for j in (0, 1)}
    assert g.sumset_size == len(block)
    assert g.ratio == len(block)
    assert g.max_fiber == g.sumset_size


def test_growth_full_grid_saturates():
    sc = Scale(4, 2)
    X = UniformSetRecord(2, 2, (16, 16), CellSet.full_grid(sc, 16))
    sigma = uniform(sc, [[0, 0], [1, 0], [0, 1]])
    g = sumset_growth_experiment(X, sigma)
    # [0, 17)^2 plus one extra column and one extra row from the two unit shifts
    assert g.sumset_size == 17 * 17 + 2 * 17
    assert g.ratio < 1.3
    assert not g.local_hypothesis


def test_growth_uniformized_cantor_fixture(lifted12):
    fx = FIXTURE["growth"]
    rec = extract_uniform(lifted12.support(), fx["T"], fx["m"], fx["epsilon"]).records[fx["record"]]
    assert list(rec.branching) == fx["branching"]
    g = sumset_growth_experiment(rec, lifted12)
    assert g.ratio >= 2
    assert (g.X_size, g.sumset_size, g.ratio) == (fx["X_size"], fx["sumset_size"], fx["ratio"])
    assert g.sumset_size >= g.max_fiber


def test_growth_top_mass(lifted12):
    rec = extract_uniform(lifted12.support(), 3, 4, 0.2).records[0]
    full = sumset_growth_experiment(rec, lifted12)
    for frac in [0.1, 0.5, 0.9, 1.0]:
        g = sumset_growth_experiment(rec, lifted12, "top-mass", frac)
        assert g.pair_mass >= frac * (1 - 1e-9)
        assert g.max_fiber <= g.sumset_size <= full.sumset_size
    assert sumset_growth_experiment(rec, lifted12, "top-mass", 1.0).sumset_size == full.sumset_size


def test_growth_rejects_non_uniform(lifted12):
    cells = CellSet(Scale(12, 2), [[0, 0], [0, 1], [4000, 4000]])
    with pytest.raises(ValidationError):
        sumset_growth_experiment(UniformSetRecord(3, 4, (1, 1, 1, 1), cells), lifted12)


# -- row structure


def row_frame():
    return tangent_projection(parabola(), 0.0)


def test_rows_single_full_row():
    sc = Scale(8, 2)
    XQ = CellSet(sc, [[x, 5] for x in range(16)])
    rep = row_structure(XQ, row_frame())
    assert rep.rectangles == 16
    assert rep.histogram == {0: 15, 16: 1}
    assert rep.full_rows == 1


def test_rows_full_square():
    rep = row_structure(CellSet.full_grid(Scale(8, 2), 16), row_frame())
    assert rep.histogram == {16: 16}
    assert rep.full_rows == rep.rectangles == 16


def test_rows_cantor_heights():
    heights = builtin_measure("cantor4", Scale(4)).indices.ravel().tolist()
    assert heights == [0, 3, 12, 15]
    XQ = CellSet(Scale(8, 2), [[x, y] for y in heights for x in range(16)])
    rep = row_structure(XQ, row_frame())
    assert rep.full_rows == len(heights)
    assert rep.full_threshold == pytest.approx(8.0)


def test_rows_errors():
    with pytest.raises(ValidationError):
        row_structure(CellSet(Scale(8, 2), [[0, 0], [16, 0]]), row_frame())
    with pytest.raises(ValidationError):
        row_structure(CellSet(Scale(7, 2), [[0, 0]]), row_frame())
    with pytest.raises(ValidationError):
        row_structure(CellSet(Scale(8, 1), [[0]]), row_frame())


@given(st.lists(st.tuples(st.integers(0, 15), st.integers(0, 15)), min_size=1, max_size=80), st.floats(-1, 1))
def test_rows_histogram_sums(pts, x):
    XQ = CellSet(Scale(8, 2), [(a + 32, b + 48) for a, b in pts])
    rep = row_structure(XQ, tangent_projection(parabola(), x))
    assert sum(k * v for k, v in rep.histogram.items()) == len(XQ) == rep.total
    assert sum(rep.histogram.values()) == rep.rectangles


# -- L2 lower bound


def test_l2_equality_case():
    mu = uniform(Scale(8), [3, 9, 40], exact=True)
    sigma = atom(Scale(8), 5, exact=True)
    rep = l2_lower_bound_check(mu, sigma, GoodPairSet.everything(mu, sigma))
    assert rep.c == 1 and rep.C == 1
    assert rep.lhs == rep.rhs
    assert rep.ok


@pytest.mark.parametrize("seed", range(200))
def test_l2_random_instances(seed):
    rng = np.random.default_rng([5, seed])
    sc = Scale(7)
    mu = uniform(sc, rng.choice(128, int(rng.integers(1, 20)), replace=False), exact=True)
    n = int(rng.integers(1, 15))
    raw = rng.integers(1, 10, n)
    sigma = DeltaMeasure(sc, rng.choice(128, n, replace=False).reshape(-1, 1), [Fraction(int(r), int(raw.sum())) for r in raw])
    allp = np.array([[p, q] for p in mu.indices.ravel() for q in sigma.indices.ravel()])
    keep = rng.random(len(allp)) < rng.uniform(0.1, 1.0)
    keep[int(rng.integers(len(allp)))] = True
    G = GoodPairSet.from_pairs(mu, sigma, allp[keep])
    rep = l2_lower_bound_check(mu, sigma, G)
    assert rep.ok
    # independent recomputation of all four quantities
    wm = dict(zip(mu.indices.ravel().tolist(), mu.weights))
    ws = dict(zip(sigma.indices.ravel().tolist(), sigma.weights))
    c = sum(wm[p] * ws[q] for p, q in G.pairs.tolist())
    C = Fraction(len({p + q for p, q in G.pairs.tolist()}), len(mu))
    assert rep.c == c and rep.C == C
    assert rep.lhs == l2sh_norm_sq(convolve(mu, sigma))
    assert rep.rhs == c * c / C * l2sh_norm_sq(mu)


def test_l2_empty_rejected():
    mu = uniform(Scale(6), [1, 2])
    with pytest.raises(ValidationError):
        GoodPairSet.from_pairs(mu, mu, np.zeros((0, 2), dtype=np.int64))


def test_l2_nonconstant_rejected():
    mu = DeltaMeasure(Scale(6), [[1], [2]], [0.25, 0.75])
    with pytest.raises(ValidationError):
        l2_lower_bound_check(mu, mu, GoodPairSet.everything(mu, mu))


def test_good_pairs_outside_support_rejected():
    mu = uniform(Scale(6), [1, 2])
    with pytest.raises(ValidationError):
        GoodPairSet.from_pairs(mu, mu, [[1, 3]])


def test_good_pair_mass_everything():
    mu = builtin_measure("cantor4", Scale(6))
    G = GoodPairSet.everything(mu, mu)
    assert G.mass == pytest.approx(1.0, abs=1e-12)
    assert len(G) == len(mu) ** 2
    assert len(cell_sumset(CellSet(mu.scale, mu.indices), CellSet(mu.scale, mu.indices))) <= len(G)
