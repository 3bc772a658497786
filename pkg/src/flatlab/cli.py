"""Command-line front end.

Every subcommand reads one JSON config (``--config``), writes its reports to
``--out`` and exits with 0 when all property checks passed, 2 on invalid
input, 3 when a size budget is exceeded and 4 when a checked property fails.

Measure sources (key ``measure`` and friends) are either a measure-file path
or an object with exactly one of::

    {"builtin": "cantor4", "m": 10}
    {"ifs": {"ratios": [...], "shifts": [...], "probs": [...]}, "m": 10}
    {"atom": [0, 0], "m": 4, "dim": 2}
    {"file": "measure.json"}

plus optional ``"curve"`` (built-in name, curve-table path or inline table)
to lift the 1D measure onto a graph. Mathematical parameters (scales, D,
alpha, epsilon, p, R, ...) have no defaults and must appear in the config.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from . import io as fio
from .curve import tangent_projection
from .errors import FlatlabError, PropertyViolation, ValidationError
from .experiments import (
    GoodPairSet,
    capture_counting_experiment,
    l2_lower_bound_check,
    row_structure,
    sumset_growth_experiment,
)
from .grid import CellSet, Scale
from .measure import (
    DeltaMeasure,
    Window,
    affine_ifs,
    atom,
    builtin_measure,
    coarsen,
    convolve,
    from_ifs,
    lift_to_curve,
    self_convolution_power,
    uniform,
)
from .perfectness import PerfectnessQuery, frostman_check, frostman_constant, frostman_exponent, scan_perfectness
from .spectral import (
    DEFAULT_H,
    _field_blocks,
    ball_indicator_spectrum,
    band_limited_flattening,
    flattening_iteration,
    fourier_energy_bridge,
    lp_profile,
    point_spectrum,
    random_spectrum,
    riesz_energy,
)
from .uniformize import UniformSetRecord, extract_uniform, verify_uniform

ENERGY_CROSS_FACTOR = 4.0


class Context:
    def __init__(self, cfg: fio.Config, out: Path, exact: bool):
        self.cfg = cfg
        self.out = out
        self.exact = exact
        self.base = Path(cfg.path).parent if cfg.path != "<config>" else Path.cwd()
        self.failures: list[str] = []

    @property
    def resolved(self) -> dict:
        return {**self.cfg.data, "exact": self.exact}

    def envelope(self, kind: str, body: dict) -> dict:
        return fio.report_envelope(kind, self.resolved, {**body, "checks_passed": not self.failures, "failures": list(self.failures)})

    def hash(self) -> str:
        return fio.config_hash(self.resolved)

    def check(self, ok: bool, what: str):
        if not ok:
            self.failures.append(what)

    def csv(self, rows: list, name: str, columns: list):
        h = self.hash()
        fio.write_csv([{**r, "config_hash": h} for r in rows], self.out / name, columns + ["config_hash"])

    def json(self, kind: str, body: dict, name: str):
        fio.write_json(self.envelope(kind, body), self.out / name)


# ---------------------------------------------------------------------------
# measure sources


def load_measure(ctx: Context, key: str = "measure") -> DeltaMeasure:
    cfg = ctx.cfg
    src = cfg.require(key)
    return _measure_from_source(ctx, src, key)


def _measure_from_source(ctx: Context, src, key: str) -> DeltaMeasure:
    cfg = ctx.cfg
    if isinstance(src, str):
        p = Path(src) if Path(src).is_absolute() else ctx.base / src
        mu = fio.read_measure(p)
        return mu.to_exact() if ctx.exact and not mu.exact else mu
    if not isinstance(src, dict):
        raise cfg.error(key, "expected a measure file path or a source object")
    kinds = [k for k in ("builtin", "ifs", "atom", "file") if k in src]
    if len(kinds) != 1:
        raise cfg.error(key, "give exactly one of builtin / ifs / atom / file")
    kind = kinds[0]
    exact = ctx.exact or bool(src.get("exact", False))
    if kind == "file":
        mu = _measure_from_source(ctx, src["file"], key)
    else:
        if "m" not in src:
            raise cfg.error(key, "the scale exponent m is required")
        m = src["m"]
        if not isinstance(m, int) or isinstance(m, bool):
            raise cfg.error(key, "m must be an integer")
        if kind == "builtin":
            mu = builtin_measure(src["builtin"], Scale(m), exact=exact)
        elif kind == "ifs":
            spec = src["ifs"]
            try:
                ifs = affine_ifs(spec["ratios"], spec["shifts"], spec.get("probs"), exact=exact)
            except KeyError as exc:
                raise cfg.error(key, f"ifs needs {exc}") from None
            mu = from_ifs(ifs, Scale(m))
        else:
            pos = np.atleast_1d(np.asarray(src["atom"], dtype=np.int64))
            mu = atom(Scale(m, len(pos)), pos, exact=exact)
    if "curve" in src:
        mu = lift_to_curve(mu, fio.load_curve(src["curve"], ctx.base))
    return mu


def _scales(ctx: Context, key: str) -> list:
    vals = ctx.cfg.number_list(key)
    if any(int(v) != v or v < 1 for v in vals):
        raise ctx.cfg.error(key, "scale exponents must be positive integers")
    return [int(v) for v in vals]


def _positive(ctx: Context, key: str) -> float:
    v = ctx.cfg.require(key, float)
    if not v > 0:
        raise ctx.cfg.error(key, "must be positive")
    return float(v)


def _summary(mu: DeltaMeasure) -> dict:
    return {
        "scale_m": mu.scale.m,
        "dim": mu.dim,
        "delta": mu.delta,
        "atoms": len(mu),
        "mass": str(mu.total_mass) if mu.exact else float(mu.total_mass),
        "diameter": mu.diameter(),
        "exact": mu.exact,
    }


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(ctx: Context) -> dict:
    mu = load_measure(ctx)
    fio.write_measure(mu, ctx.out / "measure.json")
    summary = _summary(mu)
    ctx.json("generate", {"summary": summary}, "generate.json")
    print(f"scale 2^-{mu.scale.m} (d={mu.dim}), atoms {len(mu)}, mass {summary['mass']}, diameter {summary['diameter']:.6g}")
    return summary


def cmd_convolve(ctx: Context) -> dict:
    cfg = ctx.cfg
    if "measures" in cfg.data:
        srcs = cfg.require("measures", list)
        if len(srcs) != 2:
            raise cfg.error("measures", "expected exactly two sources")
        a, b = (_measure_from_source(ctx, s, "measures") for s in srcs)
        out = convolve(a, b)
    else:
        mu = load_measure(ctx)
        k = cfg.require("power", int)
        out = self_convolution_power(mu, k)
    fio.write_measure(out, ctx.out / "measure.json")
    summary = _summary(out)
    ctx.json("convolve", {"summary": summary}, "convolve.json")
    print(f"result: {summary['atoms']} atoms, mass {summary['mass']}")
    return summary


def _scan_body(ctx: Context, mu: DeltaMeasure, D: float) -> dict:
    cfg = ctx.cfg
    window = None
    if "window" in cfg.data:
        w = cfg.require("window", dict)
        window = Window(tuple(w["lo"]), tuple(w["hi"]))
    r_min = cfg.get("r_min", None, float)
    rep = scan_perfectness(mu, PerfectnessQuery(D, window, r_min, cfg.get("centers", "support", str)))
    body = {"scan": rep.to_json()}
    if 0 < rep.best_beta < 1:
        s = frostman_exponent(D, rep.best_beta)
        C = frostman_constant(D, s, rep.diam_support)
        fr = frostman_check(mu, s, C, D=D, r_min=r_min)
        body["frostman"] = {"s": s, "C": C, "ok": fr.ok, "worst_ratio": fr.worst_ratio, "witness": list(fr.witness[0]) + [fr.witness[1]]}
        ctx.check(fr.ok, "Frostman bound from the scanned beta failed")
    return body


def cmd_scan(ctx: Context) -> dict:
    mu = load_measure(ctx)
    D = _positive(ctx, "D")
    body = _scan_body(ctx, mu, D)
    ctx.json("scan", body, "scan.json")
    sc = body["scan"]
    print(f"best beta {sc['best_beta']:.6g} at radius {sc['witness']['radius']:.6g} ({sc['tested_ball_count']} balls)")
    return body


def cmd_energy(ctx: Context) -> dict:
    cfg = ctx.cfg
    mu = load_measure(ctx)
    alphas = cfg.number_list("alpha")
    ms = _scales(ctx, "scales")
    method = cfg.get("method", "kernel", str)
    ks = [int(k) for k in cfg.number_list("k", required=False)] or [1]
    cross = bool(cfg.get("cross_check", False, bool))
    rows = []
    for m in ms:
        base = coarsen(mu, Scale(m, mu.dim))
        for k in ks:
            power = self_convolution_power(base, k) if k > 1 else base
            for a in alphas:
                val = riesz_energy(power, a, base.delta, method)
                row = {"alpha": a, "delta": base.delta, "m": m, "k": k, "method": method, "value": val, "kappa": math.log(val) / math.log(1 / base.delta)}
                ctx.check(val > 0, f"nonpositive energy at alpha={a}, m={m}, k={k}")
                if cross:
                    other = riesz_energy(power, a, base.delta, "mollified" if method == "kernel" else "kernel")
                    row["cross_value"] = other
                    ratio = val / other
                    ctx.check(1 / ENERGY_CROSS_FACTOR <= ratio <= ENERGY_CROSS_FACTOR, f"kernel/mollified disagree by {ratio:.3g} at alpha={a}, m={m}, k={k}")
                rows.append(row)
    cols = ["alpha", "delta", "m", "k", "method", "value", "kappa"] + (["cross_value"] if cross else [])
    ctx.csv(rows, "energy.csv", cols)
    ctx.json("energy", {"rows": rows}, "energy.json")
    return {"rows": rows}


def cmd_fourier(ctx: Context) -> dict:
    cfg = ctx.cfg
    mu = load_measure(ctx)
    ps = [int(p) for p in cfg.number_list("p")]
    Rs = [float(r) for r in cfg.number_list("R")]
    h = float(cfg.get("h", DEFAULT_H, float))
    prof = lp_profile(mu, ps, Rs, h)
    rows = [{"p": r["p"], "R": r["R"], "lp_avg": r["lp_avg"], "h": h} for r in prof.rows]
    for p in ps:
        vals = [prof.value(p, R) for R in sorted(Rs)]
        ctx.check(all(b >= a * (1 - 1e-12) for a, b in zip(vals, vals[1:])), f"lp_avg decreased in R at p={p}")
        for R in Rs:
            npts = _lattice_count(h, R, mu.dim)
            bound = npts * h ** mu.dim * prof.sup_abs[R] ** p
            ctx.check(prof.value(p, R) <= bound * (1 + 1e-9), f"lp_avg exceeds |B(R)| sup^p at p={p}, R={R}")
    body = {"rows": rows, "slopes": {str(k): v for k, v in prof.slopes.items()}, "sup_abs": {repr(k): v for k, v in prof.sup_abs.items()}}
    if cfg.get("dump", False, bool):
        R = max(Rs)
        grid = np.concatenate([F.reshape(-1) for _, F in _field_blocks(mu, h, R)])
        K = int(math.floor(R / h + 1e-12))
        grid = grid.reshape((2 * K + 1,) * mu.dim)
        fio.dump_spectrum(grid, h, ctx.out / "spectrum.f64")
        body["spectrum"] = "spectrum.f64"
    ctx.csv(rows, "fourier.csv", ["p", "R", "lp_avg", "h"])
    ctx.json("fourier", body, "fourier.json")
    for r in rows:
        print(f"p={r['p']} R={r['R']:g} lp_avg={r['lp_avg']:.6g}")
    return body


def _lattice_count(h: float, R: float, dim: int) -> int:
    K = int(math.floor(R / h + 1e-12))
    ax = np.arange(-K, K + 1) * h
    if dim == 1:
        return int(np.sum(ax ** 2 <= R * R * (1 + 1e-12)))
    return int(np.sum(ax[:, None] ** 2 + ax[None, :] ** 2 <= R * R * (1 + 1e-12)))


def _load_cells(ctx: Context, key: str) -> CellSet:
    src = ctx.cfg.require(key)
    if isinstance(src, str):
        p = Path(src) if Path(src).is_absolute() else ctx.base / src
        return fio.read_cells(p)
    if isinstance(src, dict) and "cells" in src:
        sc = Scale(int(src["m"]), int(src.get("dim", 2)))
        return CellSet(sc, np.asarray(src["cells"], dtype=np.int64))
    return _measure_from_source(ctx, src, key).support()


def cmd_uniformize(ctx: Context) -> dict:
    cfg = ctx.cfg
    P = _load_cells(ctx, "cells")
    T = cfg.require("T", int)
    blocks = cfg.require("blocks", int)
    eps = _positive(ctx, "epsilon")
    rep = extract_uniform(P, T, blocks, eps, cfg.get("round_cap", 10_000, int))
    for r in rep.records:
        ctx.check(verify_uniform(r.cells, T, blocks).ok, "emitted record is not uniform")
    total = sum(len(r.cells) for r in rep.records) + len(rep.remainder)
    ctx.check(total == len(P), "records and remainder do not partition the input")
    ctx.json("uniformize", rep.to_json(), "uniformize.json")
    print(f"{len(rep.records)} records, remainder {len(rep.remainder)} of {len(P)}; partial={rep.partial}")
    return rep.to_json()


# ---------------------------------------------------------------------------
# experiments


def _exp_flattening(ctx: Context) -> dict:
    cfg = ctx.cfg
    mu = load_measure(ctx)
    t = _positive(ctx, "t")
    ms = _scales(ctx, "scales")
    ks = [int(k) for k in cfg.number_list("k")]
    prof = flattening_iteration(mu, t, ms, ks=ks)
    body = {"rows": prof.rows, "strictly_decreasing": {str(m): prof.strictly_decreasing(m) for m in ms}}
    if "D" in cfg.data:
        body.update(_scan_body(ctx, mu, _positive(ctx, "D")))
    ctx.csv(prof.rows, "flattening.csv", ["alpha", "delta", "m", "k", "method", "atoms", "value", "kappa"])
    ctx.json("flattening", body, "flattening.json")
    for r in prof.rows:
        print(f"m={r['m']} k={r['k']} I={r['value']:.6g} kappa={r['kappa']:.6g}")
    return body


def _exp_capture(ctx: Context) -> dict:
    cfg = ctx.cfg
    mu = load_measure(ctx, "mu")
    sigma = load_measure(ctx, "sigma")
    tab = capture_counting_experiment(mu, sigma, cfg.require("alpha", float), _positive(ctx, "epsilon"), _scales(ctx, "scales"), D=_positive(ctx, "D"))
    cols = ["m", "delta", "E_size", "support_size", "threshold", "pass", "energy", "energy_hypothesis"]
    ctx.csv(tab.rows, "capture.csv", cols)
    ctx.json("capture", {"rows": tab.rows, "fitted_exponent": tab.fitted_exponent, "sigma_hypothesis": tab.sigma_hypothesis, "all_pass": tab.all_pass}, "capture.json")
    return {"rows": tab.rows}


def _exp_growth(ctx: Context) -> dict:
    cfg = ctx.cfg
    X = _load_cells(ctx, "X")
    T = cfg.require("T", int)
    blocks = cfg.require("blocks", int)
    res = verify_uniform(X, T, blocks)
    if not res.ok:
        raise cfg.error("X", f"not uniform: {res.violation}")
    rec = UniformSetRecord(T, blocks, res.branching, X)
    sigma = load_measure(ctx, "sigma")
    rep = sumset_growth_experiment(rec, sigma, cfg.get("selection", "all", str), float(cfg.get("fraction", 1.0, float)), cfg.require("alpha", float), _positive(ctx, "epsilon"))
    ctx.check(rep.sumset_size >= rep.max_fiber, "sumset smaller than a single fiber")
    body = dict(rep.__dict__)
    ctx.csv([body], "growth.csv", sorted(body))
    ctx.json("growth", body, "growth.json")
    return body


def _exp_rows(ctx: Context) -> dict:
    cfg = ctx.cfg
    X = _load_cells(ctx, "X")
    curve = fio.load_curve(cfg.require("curve"), ctx.base)
    frame = tangent_projection(curve, cfg.require("anchor", float))
    rep = row_structure(X, frame, cfg.get("eta", None, float), cfg.require("alpha", float))
    ctx.check(rep.total == len(X), "histogram does not sum to |XQ|")
    body = dict(rep.__dict__)
    body["histogram"] = {str(k): v for k, v in rep.histogram.items()}
    ctx.csv([{"count": k, "rectangles": v} for k, v in rep.histogram.items()], "rows.csv", ["count", "rectangles"])
    ctx.json("rows", body, "rows.json")
    return body


def _exp_bridge(ctx: Context) -> dict:
    cfg = ctx.cfg
    mu = load_measure(ctx)
    p = cfg.require("p", int)
    Rs = cfg.number_list("R")
    u = cfg.get("u", None, float)
    eps = cfg.get("epsilon", None, float)
    if u is None and eps is None:
        raise cfg.error("u", "give u or epsilon (u = 2 - epsilon/2)")
    rep = fourier_energy_bridge(mu, p, Rs, u=u, epsilon=eps if eps is not None else 0.0, h=float(cfg.get("h", DEFAULT_H, float)))
    bound = cfg.get("ratio_bound", None, float)
    for r in rep.rows:
        ctx.check(r["ratio"] > 0, f"nonpositive bridge ratio at R={r['R']}")
        if bound is not None:
            ctx.check(r["ratio"] <= bound, f"bridge ratio {r['ratio']:.4g} exceeds {bound} at R={r['R']}")
    ctx.csv(rep.rows, "bridge.csv", ["R", "lhs", "rhs", "ratio"])
    ctx.json("bridge", {"p": rep.p, "u": rep.u, "h": rep.h, "rows": rep.rows, "max_ratio": rep.max_ratio}, "bridge.json")
    return {"rows": rep.rows}


def _exp_l2check(ctx: Context) -> dict:
    cfg = ctx.cfg
    seed = cfg.require("seed", int)
    n = cfg.require("instances", int)
    m = cfg.require("m", int)
    rows = [l2_random_instance(np.random.default_rng([seed, i]), m) for i in range(n)]
    out = []
    for i, rep in enumerate(rows):
        ctx.check(rep.ok, f"instance {i} violated the L2 lower bound")
        out.append({"instance": i, "c": float(rep.c), "C": float(rep.C), "lhs": float(rep.lhs), "rhs": float(rep.rhs), "ok": rep.ok})
    ctx.csv(out, "l2check.csv", ["instance", "c", "C", "lhs", "rhs", "ok"])
    ctx.json("l2check", {"rows": out}, "l2check.json")
    return {"rows": out}


def l2_random_instance(rng: np.random.Generator, m: int):
    """One random instance: uniform ``mu``, random ``sigma``, random good pairs."""
    n = 1 << m
    sc = Scale(m)
    X = np.unique(rng.integers(0, n, size=int(rng.integers(1, 12))))
    mu = uniform(sc, X.reshape(-1, 1), exact=True)
    Y = np.unique(rng.integers(0, n, size=int(rng.integers(1, 12))))
    raw = rng.integers(1, 20, size=len(Y))
    sigma = DeltaMeasure(sc, Y.reshape(-1, 1), [Fraction(int(r), int(raw.sum())) for r in raw])
    pairs = np.array([(x, y) for x in X for y in Y], dtype=np.int64)
    keep = rng.random(len(pairs)) < rng.uniform(0.1, 1.0)
    if not keep.any():
        keep[int(rng.integers(0, len(pairs)))] = True
    G = GoodPairSet.from_pairs(mu, sigma, pairs[keep])
    return l2_lower_bound_check(mu, sigma, G)


def _exp_band(ctx: Context) -> dict:
    cfg = ctx.cfg
    mu = load_measure(ctx)
    R = _positive(ctx, "R")
    h = float(cfg.get("h", DEFAULT_H, float))
    kind = cfg.require("spectrum", str)
    if kind == "indicator":
        f = ball_indicator_spectrum(h, R, mu.dim)
    elif kind == "random":
        f = random_spectrum(h, R, mu.dim, cfg.require("seed", int))
    elif kind == "point":
        f = point_spectrum(h, R, mu.dim)
    else:
        raise cfg.error("spectrum", "expected indicator, random or point")
    rep = band_limited_flattening(f, mu, _positive(ctx, "epsilon"), cfg.require("p", int), R)
    ctx.check(rep.chain_ok, "Holder chain inequality failed")
    body = dict(rep.__dict__)
    ctx.csv([body], "band.csv", sorted(body))
    ctx.json("band", body, "band.json")
    return body


EXPERIMENTS = {
    "flattening": _exp_flattening,
    "capture": _exp_capture,
    "growth": _exp_growth,
    "rows": _exp_rows,
    "bridge": _exp_bridge,
    "l2check": _exp_l2check,
    "band": _exp_band,
}


def cmd_experiment(ctx: Context) -> dict:
    kind = ctx.cfg.require("kind", str)
    if kind not in EXPERIMENTS:
        raise ctx.cfg.error("kind", f"unknown experiment; choose from {sorted(EXPERIMENTS)}")
    return EXPERIMENTS[kind](ctx)


COMMANDS = {
    "generate": cmd_generate,
    "scan": cmd_scan,
    "energy": cmd_energy,
    "fourier": cmd_fourier,
    "convolve": cmd_convolve,
    "uniformize": cmd_uniformize,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="flatlab", description="Numerical laboratory for discretized measures and L^2 flattening.")
    ap.add_argument("--version", action="version", version=f"flatlab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON config file")
        sp.add_argument("--out", help="output directory (default: the config's 'output' key or .)")
        sp.add_argument("--threads", type=int, help="worker threads (default: $FLATLAB_THREADS)")
        sp.add_argument("--exact", action="store_true", help="rational arithmetic where supported")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = args.threads if args.threads is not None else os.environ.get("FLATLAB_THREADS")
    try:
        if threads is not None:
            try:
                n = int(threads)
            except ValueError:
                raise ValidationError(f"invalid thread count {threads!r}") from None
            if n < 1:
                raise ValidationError("thread count must be positive")
            _kernels.set_threads(n)
        cfg = fio.Config.load(args.config)
        out = Path(args.out or cfg.get("output", ".", str))
        exact = bool(args.exact or cfg.get("exact", False, bool))
        ctx = Context(cfg, out, exact)
        COMMANDS[args.command](ctx)
    except FlatlabError as exc:
        print(f"flatlab {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    if ctx.failures:
        for f in ctx.failures:
            print(f"flatlab {args.command}: property check failed: {f}", file=sys.stderr)
        return PropertyViolation.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
