"""JSON experiment configuration: parsing, validation and object construction."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .fields import Grid
from .geometry import Disk, DomainGeometry, GeometryError, Polygon, Rectangle, make_domain
from .simulator import ModelParams, TimeControls, make_initial_data


class ConfigError(ValueError):
    pass


_OPTIONAL = object()

SCHEMA: dict[str, dict[str, object]] = {
    "domain": {"shape": str, "x0": "point", "boundary_resolution": _OPTIONAL,
               "radius": _OPTIONAL, "center": _OPTIONAL, "a": _OPTIONAL, "b": _OPTIONAL,
               "vertices": _OPTIONAL},
    "grid": {"nx": int, "ny": _OPTIONAL},
    "params": {k: "positive" for k in ("alpha", "beta", "gamma", "delta", "chi", "xi")},
    "initial": {"kind": str, "c": _OPTIONAL, "center": _OPTIONAL, "width": _OPTIONAL,
                "mass": _OPTIONAL, "radius": _OPTIONAL},
    "time": {"dt0": "positive", "t_end": "positive", "output_interval": "positive",
             "blowup_umax_factor": _OPTIONAL, "blowup_energy_factor": _OPTIONAL,
             "cfl": _OPTIONAL, "dt_min": _OPTIONAL, "max_steps": _OPTIONAL},
    "ctilde": {"mode": str, "value": _OPTIONAL, "n_trials": _OPTIONAL, "seed": _OPTIONAL,
               "safety_factor": _OPTIONAL, "grid_n": _OPTIONAL},
    "bench": {"n_trials": int, "seed": _OPTIONAL, "grid_n": _OPTIONAL, "c1_values": _OPTIONAL,
              "heldout": _OPTIONAL},
    "checks": {"odi_tolerance": _OPTIONAL, "mass_rtol": _OPTIONAL},
    "outputs": {"dir": _OPTIONAL, "prefix": _OPTIONAL},
}

INITIAL_KEYS = {"constant": ("c",), "gaussian": ("center", "width", "mass"),
                "annulus": ("center", "radius", "width", "mass")}


def _require(block: dict, name: str, key: str):
    if key not in block:
        raise ConfigError(f"missing key '{name}.{key}'")
    return block[key]


def _number(value, where: str, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"'{where}' must be a finite number, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(f"'{where}' must be positive, got {value!r}")
    return float(value)


def _point(value, where: str) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"'{where}' must be a pair of numbers, got {value!r}")
    return _number(value[0], where), _number(value[1], where)


@dataclass
class ExperimentConfig:
    raw: dict
    source: str = "<memory>"

    @classmethod
    def from_dict(cls, data: dict, source: str = "<memory>") -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        for block, body in data.items():
            if block not in SCHEMA:
                raise ConfigError(f"unknown block '{block}'")
            if not isinstance(body, dict):
                raise ConfigError(f"block '{block}' must be an object")
            for key in body:
                if key not in SCHEMA[block]:
                    raise ConfigError(f"unknown key '{block}.{key}'")
            for key, kind in SCHEMA[block].items():
                if kind is _OPTIONAL:
                    continue
                value = _require(body, block, key)
                if kind == "positive":
                    _number(value, f"{block}.{key}", positive=True)
                elif kind == "point":
                    _point(value, f"{block}.{key}")
                elif kind is int and (isinstance(value, bool) or not isinstance(value, int)
                                      or value <= 0):
                    raise ConfigError(f"'{block}.{key}' must be a positive integer, got {value!r}")
                elif kind is str and not isinstance(value, str):
                    raise ConfigError(f"'{block}.{key}' must be a string, got {value!r}")
        return cls(data, source)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        return cls.from_dict(data, str(path))

    def block(self, name: str) -> dict:
        if name not in self.raw:
            raise ConfigError(f"missing block '{name}'")
        return self.raw[name]

    def has(self, name: str) -> bool:
        return name in self.raw

    def sha256(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()

    def override_seed(self, seed: int) -> None:
        for name in ("ctilde", "bench"):
            if name in self.raw:
                self.raw[name]["seed"] = seed

    # ------------------------------------------------------------ builders

    def domain(self) -> DomainGeometry:
        b = self.block("domain")
        shape = b["shape"]
        center = _point(b.get("center", (0.0, 0.0)), "domain.center")
        if shape == "disk":
            s = Disk(_number(_require(b, "domain", "radius"), "domain.radius"), center)
        elif shape == "rectangle":
            s = Rectangle(_number(_require(b, "domain", "a"), "domain.a"),
                          _number(_require(b, "domain", "b"), "domain.b"), center)
        elif shape == "polygon":
            verts = _require(b, "domain", "vertices")
            if not isinstance(verts, list):
                raise ConfigError("'domain.vertices' must be a list of points")
            s = Polygon(tuple(_point(v, "domain.vertices") for v in verts))
        else:
            raise ConfigError(f"'domain.shape' must be disk, rectangle or polygon, got {shape!r}")
        res = b.get("boundary_resolution", 256)
        if isinstance(res, bool) or not isinstance(res, int):
            raise ConfigError("'domain.boundary_resolution' must be an integer")
        try:
            return make_domain(s, _point(b["x0"], "domain.x0"), res)
        except GeometryError as exc:
            raise ConfigError(f"domain: {exc}") from exc

    def grid(self, domain: DomainGeometry | None = None) -> Grid:
        domain = domain or self.domain()
        if not isinstance(domain.shape, Rectangle):
            raise ConfigError("simulation and quadrature need a rectangle domain; "
                              f"'domain.shape' is {domain.shape.kind}")
        b = self.block("grid")
        ny = b.get("ny", b["nx"])
        if isinstance(ny, bool) or not isinstance(ny, int) or ny <= 0:
            raise ConfigError(f"'grid.ny' must be a positive integer, got {ny!r}")
        try:
            return Grid.for_rectangle(domain.shape, b["nx"], ny)
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}") from exc

    def params(self) -> ModelParams:
        b = self.block("params")
        return ModelParams(**{k: float(b[k]) for k in SCHEMA["params"]})

    def initial_kind(self) -> str:
        kind = self.block("initial")["kind"]
        if kind not in INITIAL_KEYS:
            raise ConfigError(f"'initial.kind' must be one of {sorted(INITIAL_KEYS)}, got {kind!r}")
        return kind

    def initial(self, grid: Grid):
        b = self.block("initial")
        kind = self.initial_kind()
        kw = {}
        for key in INITIAL_KEYS[kind]:
            val = _require(b, "initial", key)
            kw[key] = _point(val, f"initial.{key}") if key == "center" else _number(val, f"initial.{key}")
        try:
            return make_initial_data(kind, grid, **kw)
        except ValueError as exc:
            raise ConfigError(f"initial: {exc}") from exc

    def time_controls(self) -> TimeControls:
        b = dict(self.block("time"))
        mass_rtol = self.raw.get("checks", {}).get("mass_rtol")
        if mass_rtol is not None:
            b["mass_rtol"] = mass_rtol
        for k, v in b.items():
            _number(v, f"time.{k}", positive=True)
        if "max_steps" in b:
            b["max_steps"] = int(b["max_steps"])
        try:
            return TimeControls(**b)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"time: {exc}") from exc

    def odi_tolerance(self) -> float:
        return _number(self.raw.get("checks", {}).get("odi_tolerance", 0.05),
                       "checks.odi_tolerance", positive=True)

    def ctilde_block(self) -> dict:
        b = self.block("ctilde")
        mode = b["mode"]
        if mode == "user":
            _number(_require(b, "ctilde", "value"), "ctilde.value")
            if b["value"] < 0:
                raise ConfigError("'ctilde.value' must be nonnegative")
        elif mode == "estimate":
            n = _require(b, "ctilde", "n_trials")
            if isinstance(n, bool) or not isinstance(n, int) or n < 1:
                raise ConfigError(f"'ctilde.n_trials' must be a positive integer, got {n!r}")
        else:
            raise ConfigError(f"'ctilde.mode' must be 'user' or 'estimate', got {mode!r}")
        return b
