"""YAML run configuration: parsing, validation and object builders.

Sections: ``grid``, ``params``, ``nonlinearity``, ``solver``, ``runge``,
``recovery``, ``output``, plus a top-level ``seed``.  Field-valued entries are
named analytic shapes (see :func:`nlfrac.shapes.make_field`) or
``{type: csv, path: ...}`` grids written by :mod:`nlfrac.fieldio`.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, fields as dc_fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import numpy as np
import yaml

from .errors import NlfracError
from .grid import GridSpec, build_grid
from .nonlinear_solver import ContractionConfig
from .operators import FracParams, Nonlinearity
from .recovery import RecoveryConfig
from .shapes import make_field

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "DEFAULT_CONFIG"]

SECTIONS = ("grid", "params", "nonlinearity", "solver", "runge", "recovery", "output")

DEFAULT_CONFIG: Dict[str, Any] = {
    "seed": 0,
    "grid": {
        "dim": 1,
        "N": 128,
        "L": 2 * np.pi,
        "omega": {"type": "box", "lo": [2.0], "hi": [4.0]},
        "w1": {"type": "box", "lo": [4.4], "hi": [6.0]},
        "w2": {"type": "box", "lo": [0.3], "hi": [1.6]},
        "buffer_nodes": 4,
        "window_gap": 1,
    },
    "params": {"s": 1.5, "m": 1, "K": 2, "derivative": "spectral"},
    "nonlinearity": {
        "q": {"type": "bump", "center": [3.0], "radius": 1.0, "amplitude": 0.5},
        "coefficients": [
            {"k": 1, "sigma": [0], "field": {"type": "bump", "center": [3.0], "radius": 1.0}},
            {"k": 1, "sigma": [1], "field": {"type": "bump", "center": [3.0], "radius": 1.0, "amplitude": 0.3}},
        ],
    },
    "solver": {
        "delta": 0.5,
        "eps0": 1.0,
        "tol": 1e-13,
        "max_iter": 500,
        "rtol": 1e-16,
        "data": [
            {"type": "bump", "kind": "cosine", "center": [4.9], "radius": 0.5, "amplitude": 0.05},
            {"type": "bump", "kind": "cosine", "center": [5.3], "radius": 0.5, "amplitude": 0.04},
            {"type": "bump", "kind": "cosine", "center": [5.6], "radius": 0.5, "amplitude": 0.06},
        ],
        "eps_sweep": [1.0, 0.5, 0.25, 0.125, 0.0625],
        "fd_steps": [8e-3, 4e-3, 2e-3, 1e-3],
    },
    "runge": {
        "window": "w1",
        "target": {"type": "bump", "center": [3.0], "radius": 0.9},
        "lambda_grid": [1e-4, 1e-6, 1e-8, 1e-10, 1e-12],
        "cg_tol": 1e-10,
        "cg_max": 20000,
        "penalty": "l2",
    },
    "recovery": {"mode": "oracle"},
    "output": {"dir": "out"},
}


class ConfigError(NlfracError):
    """Malformed or inconsistent configuration (CLI exit code 1)."""


def _merge(base: Mapping[str, Any], over: Mapping[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(dict(base))
    for key, val in over.items():
        if isinstance(val, Mapping) and isinstance(out.get(key), Mapping):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class RunConfig:
    raw: Dict[str, Any]
    base_dir: Path
    text_hash: str

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def section(self, name: str) -> Dict[str, Any]:
        return self.raw.get(name, {}) or {}

    # builders ---------------------------------------------------------------

    def grid(self) -> GridSpec:
        g = self.section("grid")
        regions = {key: g[key] for key in ("omega", "w1", "w2") if g.get(key) is not None}
        return build_grid(
            int(g["dim"]), int(g["N"]), float(g["L"]), regions,
            int(g.get("buffer_nodes", 4)), int(g.get("window_gap", 1)),
        )

    def params(self) -> FracParams:
        p = self.section("params")
        return FracParams(
            s=float(p["s"]), m=int(p.get("m", 0)), K=int(p.get("K", 2)),
            dim=int(self.section("grid")["dim"]), derivative=p.get("derivative", "spectral"),
        )

    def field(self, grid: GridSpec, spec: Any) -> np.ndarray:
        if isinstance(spec, Mapping) and spec.get("type") == "csv":
            from .fieldio import read_field_csv

            path = Path(spec["path"])
            if not path.is_absolute():
                path = self.base_dir / path
            return read_field_csv(path, grid)
        return make_field(grid, spec)

    def potential(self, grid: GridSpec) -> np.ndarray:
        return self.field(grid, self.section("nonlinearity").get("q", 0.0))

    def nonlinearity(self, grid: GridSpec, params: FracParams) -> Nonlinearity:
        coeffs = {}
        for entry in self.section("nonlinearity").get("coefficients", []) or []:
            key = (int(entry["k"]), tuple(int(x) for x in entry["sigma"]))
            if key in coeffs:
                raise ConfigError(f"duplicate coefficient {key}")
            coeffs[key] = self.field(grid, entry["field"])
        return Nonlinearity(params, grid, coeffs)

    def contraction(self) -> ContractionConfig:
        s = self.section("solver")
        names = {f.name for f in dc_fields(ContractionConfig)}
        return ContractionConfig(**{k: v for k, v in s.items() if k in names})

    def data(self, grid: GridSpec) -> List[np.ndarray]:
        specs = self.section("solver").get("data", [])
        if not specs:
            raise ConfigError("solver.data must list at least one exterior data field")
        return [self.field(grid, sp) for sp in specs]

    def recovery(self) -> RecoveryConfig:
        r = dict(self.section("recovery"))
        r.pop("mode", None)
        names = {f.name for f in dc_fields(RecoveryConfig)}
        unknown = set(r) - names
        if unknown:
            raise ConfigError(f"unknown recovery keys: {sorted(unknown)}")
        return RecoveryConfig(**r)

    def with_seed(self, seed: Optional[int]) -> "RunConfig":
        if seed is None:
            return self
        raw = copy.deepcopy(self.raw)
        raw["seed"] = int(seed)
        return RunConfig(raw, self.base_dir, _hash(raw))


def _hash(raw: Mapping[str, Any]) -> str:
    text = json.dumps(raw, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def _validate(raw: Dict[str, Any]) -> None:
    unknown = set(raw) - set(SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    if "seed" not in raw or raw["seed"] is None:
        raise ConfigError("config must set an integer seed")
    try:
        int(raw["seed"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"seed must be an integer: {exc}") from exc
    for key in SECTIONS:
        if key in raw and raw[key] is not None and not isinstance(raw[key], Mapping):
            raise ConfigError(f"section {key!r} must be a mapping")
    for key in ("dim", "N", "L", "omega"):
        if key not in raw.get("grid", {}):
            raise ConfigError(f"grid.{key} is required")
    if "s" not in raw.get("params", {}):
        raise ConfigError("params.s is required")
    mode = raw.get("recovery", {}).get("mode", "oracle")
    if mode not in ("oracle", "exterior"):
        raise ConfigError("recovery.mode must be 'oracle' or 'exterior'")


def parse_config(text: str, base_dir: Path = Path("."), defaults: bool = True) -> RunConfig:
    """Parse YAML text, overlay it on the defaults and validate the result."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, Mapping):
        raise ConfigError("config must be a mapping at the top level")
    if "seed" not in doc:
        raise ConfigError("config must set an integer seed")
    raw = _merge(DEFAULT_CONFIG, doc) if defaults else dict(doc)
    _validate(raw)
    # grid/params must build; surface their errors as config errors
    cfg = RunConfig(raw, Path(base_dir), _hash(raw))
    try:
        grid = cfg.grid()
        params = cfg.params()
        cfg.nonlinearity(grid, params)
        cfg.potential(grid)
        cfg.contraction()
        cfg.recovery()
    except ConfigError:
        raise
    except (NlfracError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path.parent)
