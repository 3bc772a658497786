"""File formats: measures, cell sets, curve tables, configs, reports and spectra.

Measure file (JSON)::

    {"format": "flatlab-measure", "version": 1,
     "scale": {"m": 10, "dim": 2}, "exact": true,
     "indices": [[i, j], ...], "weights": ["1/32", ...]}

Exact weights are ``"p/q"`` strings; double weights are JSON numbers written
with round-trip precision.

Curve table (JSON)::

    {"format": "flatlab-curve", "name": "quartic",
     "breakpoints": [-2, 0, 2], "coefficients": [[0, 0, 1], [0, 0, 1, 0, 0.1]],
     "modulus": 2.4}

Piece ``i`` is ``sum_k coefficients[i][k] x^k`` on ``[breakpoints[i], breakpoints[i+1])``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import re
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .curve import BUILTIN_CURVES, builtin_curve, piecewise_polynomial_curve
from .errors import ValidationError
from .grid import CellSet, Scale
from .measure import DeltaMeasure

MEASURE_FORMAT = "flatlab-measure"
CELLS_FORMAT = "flatlab-cells"
CURVE_FORMAT = "flatlab-curve"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# configs


class ConfigError(ValidationError):
    pass


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


class Config:
    """A parsed JSON config that reports the source line of offending keys."""

    def __init__(self, data: dict, text: str = "", path: str = "<config>"):
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        self.data = data
        self.text = text
        self.path = path

    @classmethod
    def load(cls, path) -> "Config":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {path} does not exist")
        text = p.read_text(encoding="utf-8")
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
        return cls(data, text, str(p))

    def error(self, key: str, msg: str) -> ConfigError:
        line = _line_of(self.text, key)
        where = f"{self.path}:{line}" if line else self.path
        return ConfigError(f"{where}: {key}: {msg}")

    def require(self, key: str, kind=None):
        if key not in self.data:
            return self._missing(key)
        return self.get(key, kind=kind)

    def _missing(self, key):
        raise ConfigError(f"{self.path}: missing required key {key!r}")

    def get(self, key: str, default=None, kind=None):
        if key not in self.data:
            return default
        v = self.data[key]
        if kind is not None and not _is_kind(v, kind):
            raise self.error(key, f"expected {_kind_name(kind)}, got {type(v).__name__}")
        return v

    def number_list(self, key: str, required: bool = True) -> list:
        if key not in self.data:
            if required:
                self._missing(key)
            return []
        v = self.data[key]
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            v = [v]
        if not isinstance(v, list) or not v or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
            raise self.error(key, "expected a nonempty number or list of numbers")
        return v


def _is_kind(v, kind) -> bool:
    if kind is float:
        return isinstance(v, (int, float)) and not isinstance(v, bool)
    if kind is int:
        return isinstance(v, int) and not isinstance(v, bool)
    return isinstance(v, kind)


def _kind_name(kind) -> str:
    return {float: "number", int: "integer", str: "string", dict: "object", list: "list", bool: "boolean"}.get(kind, str(kind))


# ---------------------------------------------------------------------------
# measures and cells


def _weight_to_json(w, exact: bool):
    return str(Fraction(w)) if exact else float(w)


def measure_to_json(mu: DeltaMeasure) -> dict:
    return {
        "format": MEASURE_FORMAT,
        "version": 1,
        "scale": {"m": mu.scale.m, "dim": mu.dim},
        "exact": mu.exact,
        "indices": mu.indices.tolist(),
        "weights": [_weight_to_json(w, mu.exact) for w in mu.weights.tolist()],
    }


def measure_from_json(data: dict, where: str = "<measure>") -> DeltaMeasure:
    if not isinstance(data, dict) or data.get("format") != MEASURE_FORMAT:
        raise ValidationError(f"{where}: not a {MEASURE_FORMAT} document")
    try:
        scale = Scale(int(data["scale"]["m"]), int(data["scale"].get("dim", 1)))
        exact = bool(data.get("exact", False))
        idx = np.asarray(data["indices"], dtype=np.int64).reshape(-1, scale.dim)
        raw = data["weights"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: malformed measure file ({exc})") from None
    if exact:
        try:
            weights = [Fraction(str(w)) for w in raw]
        except (ValueError, ZeroDivisionError) as exc:
            raise ValidationError(f"{where}: bad exact weight ({exc})") from None
    else:
        weights = [float(w) for w in raw]
    return DeltaMeasure(scale, idx, weights)


def write_measure(mu: DeltaMeasure, path) -> Path:
    return write_json(measure_to_json(mu), path)


def read_measure(path) -> DeltaMeasure:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"measure file {path} does not exist")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    return measure_from_json(data, str(path))


def cells_to_json(cells: CellSet) -> dict:
    return {"format": CELLS_FORMAT, "version": 1, "scale": {"m": cells.scale.m, "dim": cells.dim}, "cells": cells.cells.tolist()}


def cells_from_json(data: dict, where: str = "<cells>") -> CellSet:
    if not isinstance(data, dict) or data.get("format") != CELLS_FORMAT:
        raise ValidationError(f"{where}: not a {CELLS_FORMAT} document")
    scale = Scale(int(data["scale"]["m"]), int(data["scale"].get("dim", 1)))
    return CellSet(scale, np.asarray(data["cells"], dtype=np.int64).reshape(-1, scale.dim))


def read_cells(path) -> CellSet:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"cell file {path} does not exist")
    data = json.loads(p.read_text(encoding="utf-8"))
    if data.get("format") == MEASURE_FORMAT:
        return measure_from_json(data, str(path)).support()
    return cells_from_json(data, str(path))


# ---------------------------------------------------------------------------
# curves


def curve_from_json(data: dict, where: str = "<curve>"):
    if not isinstance(data, dict) or data.get("format") != CURVE_FORMAT:
        raise ValidationError(f"{where}: not a {CURVE_FORMAT} document")
    try:
        return piecewise_polynomial_curve(
            str(data.get("name", "custom")),
            data["breakpoints"],
            data["coefficients"],
            data.get("modulus"),
        )
    except KeyError as exc:
        raise ValidationError(f"{where}: missing {exc}") from None


def load_curve(spec, base: Path | None = None):
    """A built-in name, a curve-table path, or an inline curve-table object."""
    if isinstance(spec, dict):
        return curve_from_json(spec)
    if not isinstance(spec, str):
        raise ValidationError("curve must be a name, a path or an object")
    if spec in BUILTIN_CURVES:
        return builtin_curve(spec)
    p = Path(spec)
    if base is not None and not p.is_absolute():
        p = base / p
    if not p.is_file():
        raise ValidationError(f"unknown curve {spec!r}: not a built-in name and no such file")
    return curve_from_json(json.loads(p.read_text(encoding="utf-8")), str(p))


# ---------------------------------------------------------------------------
# reports


def write_json(obj, path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    tmp = p.with_suffix(p.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    os.replace(tmp, p)
    return p


def write_csv(rows: list, path, columns: list | None = None) -> Path:
    """RFC-4180 CSV with a mandatory header row."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    if columns is None:
        columns = sorted({k for r in rows for k in r})
    tmp = p.with_suffix(p.suffix + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
        w.writeheader()
        for r in rows:
            w.writerow({k: _csv_value(r.get(k, "")) for k in columns})
    os.replace(tmp, p)
    return p


def _csv_value(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return v


def read_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def report_envelope(kind: str, config: dict, body: dict) -> dict:
    return {"kind": kind, "version": __version__, "config": config, "config_hash": config_hash(config), **body}


def dump_spectrum(values: np.ndarray, h: float, path) -> tuple[Path, Path]:
    """Write a complex grid as little-endian float64 (real, imag) pairs plus a JSON sidecar."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    arr = np.stack([values.real, values.imag], axis=-1).astype("<f8")
    p.write_bytes(arr.tobytes(order="C"))
    side = p.with_suffix(p.suffix + ".json")
    K = (values.shape[0] - 1) // 2
    write_json({
        "dtype": "float64",
        "byteorder": "little",
        "order": "C",
        "shape": list(arr.shape),
        "components": ["real", "imag"],
        "h": h,
        "index_offset": K,
        "note": "entry [i, j, c] is component c of sigma_hat((i - K) h, (j - K) h)",
    }, side)
    return p, side


def load_spectrum(path) -> tuple[np.ndarray, dict]:
    p = Path(path)
    meta = json.loads(p.with_suffix(p.suffix + ".json").read_text(encoding="utf-8"))
    arr = np.frombuffer(p.read_bytes(), dtype="<f8").reshape(meta["shape"])
    return arr[..., 0] + 1j * arr[..., 1], meta
