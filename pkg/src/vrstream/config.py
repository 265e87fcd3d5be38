"""Run configuration: one YAML file describing the whole experiment."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .optimizer import OptimizationProblem
from .ratedist import RateModel, fit_rate_model, read_rd_samples
from .simulator import SessionConfig
from .viewmodel import ViewSpace, build_linear_transition, load_transition_csv


class ConfigError(ValueError):
    pass


# key -> (default, kind, description); None default means required
SCHEMA: dict[str, tuple[Any, str, str]] = {
    "K": (None, "int", "number of discrete view angles, >= 2"),
    "a": (None, "int", "FoV half-width in angle units, 1+2a < K"),
    "v_max": (1, "int", "head-motion band limit in angle units per frame, >= 1"),
    "T_s": (None, "int", "round-trip time in frame intervals, >= 0"),
    "H": (1, "int", "GOP length in frames, >= 1"),
    "C": (None, "float", "transmission budget, rate units (g-units x amplitude), > 0"),
    "B": (None, "float", "storage budget, rate units x seconds, > 0"),
    "Q": (1.0, "float", "video duration in seconds, > 0"),
    "sigma": (None, "float", "Laplacian rate parameter; ignored when rd_samples is set"),
    "d_max": (46.0, "float", "distortion ceiling (MSE) when no RD sample clips"),
    "rd_samples": (None, "path", "CSV of (distortion, rate) samples to fit sigma/d_max from"),
    "rate_floor": (1e-9, "float", "rates below this mark a sample as unencoded"),
    "hotspots": ([], "hotspots", "list of [angle (1-based), slope multiplier >= 1]"),
    "slope": (None, "float", "base linear-kernel slope; default 1/(2(v_max+1))"),
    "transition_csv": (None, "path", "K x K transition matrix CSV replacing the linear model"),
    "fov_first": (False, "bool", "apply the FoV window before head motion in the objective"),
    "max_streams": (4, "int", "largest stream count tried by the sweep, >= 1"),
    "tolerances": ({}, "tolerances", "constraint (fraction), alternate (relative), max_iters"),
    "seed": (0, "int", "trace sampling seed"),
    "duration_frames": (100_000, "int", "simulated session length in frames, >= 1"),
    "skip_warmup": (False, "bool", "exclude the first T_s frames from session statistics"),
    "scheme": ("adaptive", "scheme", "adaptive | static"),
    "output_dir": ("out", "path_out", "directory receiving all outputs"),
    "storage_grid": ([], "floats", "storage budgets B for the compare command"),
}

TOLERANCE_DEFAULTS = {"constraint": 1e-3, "alternate": 1e-6, "max_iters": 500}


@dataclass
class RunConfig:
    values: dict[str, Any]
    base_dir: Path
    digest: str

    def __getitem__(self, key):
        return self.values[key]

    @property
    def constraint_tol(self) -> float:
        return self.values["tolerances"]["constraint"]

    @property
    def alternate_tol(self) -> float:
        return self.values["tolerances"]["alternate"]

    @property
    def max_iters(self) -> int:
        return self.values["tolerances"]["max_iters"]

    @property
    def output_dir(self) -> Path:
        return self.values["output_dir"]

    def rate_model(self) -> tuple[RateModel, float | None]:
        v = self.values
        if v["rd_samples"] is not None:
            fit = fit_rate_model(read_rd_samples(v["rd_samples"]), v["d_max"], v["rate_floor"])
            return fit.model, fit.residual
        if v["sigma"] is None:
            raise ConfigError("either 'sigma' or 'rd_samples' must be given")
        return RateModel(v["sigma"], v["d_max"]), None

    def problem(self, B: float | None = None) -> OptimizationProblem:
        v = self.values
        space = ViewSpace(v["K"], v["a"])
        if v["transition_csv"] is not None:
            model = load_transition_csv(v["transition_csv"], v["v_max"])
            if model.K != space.K:
                raise ConfigError(f"transition_csv has K={model.K}, config K={space.K}")
        else:
            hot = [(k - 1, m) for k, m in v["hotspots"]]
            model = build_linear_transition(space, v["v_max"], hot, v["slope"])
        rm, _ = self.rate_model()
        # budgets are given in sample units; the optimizer works in units of g
        return OptimizationProblem(
            space, model, rm, v["T_s"], v["H"],
            v["C"] / rm.amplitude, (v["B"] if B is None else B) / rm.amplitude, v["Q"],
            fov_first=v["fov_first"],
        )

    def session(self) -> SessionConfig:
        v = self.values
        return SessionConfig(v["T_s"], v["H"], v["duration_frames"], v["seed"], v["skip_warmup"])


def _coerce(key: str, kind: str, value: Any, base: Path) -> Any:
    def bad(msg):
        raise ConfigError(f"config key '{key}': {msg} (got {value!r})")

    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            bad("expected an integer")
        return value
    if kind == "float":
        if isinstance(value, str):
            # YAML 1.1 reads exponents without a dot ("1e-4") as strings
            try:
                value = float(value)
            except ValueError:
                bad("expected a number")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            bad("expected a number")
        if not math.isfinite(value):
            bad("expected a finite number")
        return float(value)
    if kind == "bool":
        if not isinstance(value, bool):
            bad("expected true/false")
        return value
    if kind == "path":
        p = Path(value)
        p = p if p.is_absolute() else base / p
        if not p.exists():
            bad(f"file {p} does not exist")
        return p
    if kind == "path_out":
        p = Path(value)
        return p if p.is_absolute() else base / p
    if kind == "scheme":
        if value not in ("adaptive", "static"):
            bad("expected 'adaptive' or 'static'")
        return value
    if kind == "floats":
        if not isinstance(value, list):
            bad("expected a list of numbers")
        return [_coerce(key, "float", x, base) for x in value]
    if kind == "hotspots":
        if not isinstance(value, list):
            bad("expected a list of [angle, multiplier] pairs")
        out = []
        for item in value:
            if not isinstance(item, (list, tuple)) or len(item) != 2:
                bad("each hotspot must be [angle, multiplier]")
            out.append((_coerce(key, "int", item[0], base), _coerce(key, "float", item[1], base)))
        return out
    if kind == "tolerances":
        if not isinstance(value, dict):
            bad("expected a mapping")
        unknown = set(value) - set(TOLERANCE_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config key 'tolerances.{sorted(unknown)[0]}'")
        tol = dict(TOLERANCE_DEFAULTS)
        for k, v in value.items():
            tol[k] = _coerce(f"tolerances.{k}", "int" if k == "max_iters" else "float", v, base)
        return tol
    raise AssertionError(kind)


def _check_ranges(v: dict) -> None:
    def need(cond, key, msg):
        if not cond:
            raise ConfigError(f"config key '{key}': {msg} (got {v[key]!r})")

    need(v["K"] >= 2, "K", "must be >= 2")
    need(v["a"] >= 0 and 1 + 2 * v["a"] < v["K"], "a", "need a >= 0 and 1+2a < K")
    need(v["v_max"] >= 1 and 2 * v["v_max"] + 1 <= v["K"], "v_max", "need 1 <= v_max and 2 v_max + 1 <= K")
    need(v["T_s"] >= 0, "T_s", "must be >= 0")
    need(v["H"] >= 1, "H", "must be >= 1")
    for key in ("C", "B", "Q"):
        need(v[key] > 0, key, "must be positive")
    need(v["d_max"] > 0, "d_max", "must be positive")
    need(v["sigma"] is None or v["sigma"] > 0, "sigma", "must be positive")
    need(1 <= v["max_streams"] <= v["K"], "max_streams", "must be in [1, K]")
    need(v["duration_frames"] >= 1, "duration_frames", "must be >= 1")
    for k, m in v["hotspots"]:
        need(1 <= k <= v["K"] and m >= 1, "hotspots", "angles in 1..K, multipliers >= 1")
    tol = v["tolerances"]
    need(tol["constraint"] > 0 and tol["alternate"] > 0 and tol["max_iters"] >= 1,
         "tolerances", "must be positive")
    need(all(b > 0 for b in v["storage_grid"]), "storage_grid", "budgets must be positive")


def parse_override(text: str) -> tuple[str, Any]:
    key, sep, raw = text.partition("=")
    if not sep:
        raise ConfigError(f"override {text!r} is not key=value")
    return key.strip(), yaml.safe_load(raw)


def load_config(path: str | Path, overrides: list[str] | None = None) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: malformed YAML: {exc}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    for item in overrides or []:
        k, val = parse_override(item)
        if k.startswith("tolerances."):
            raw.setdefault("tolerances", {})[k.split(".", 1)[1]] = val
        else:
            raw[k] = val
    unknown = set(raw) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config key '{sorted(unknown)[0]}'")

    base = path.resolve().parent
    values = {}
    for key, (default, kind, _) in SCHEMA.items():
        if key in raw and raw[key] is not None:
            values[key] = _coerce(key, kind, raw[key], base)
        elif default is None and key not in ("sigma", "rd_samples", "slope", "transition_csv"):
            raise ConfigError(f"config key '{key}' is required")
        else:
            values[key] = _coerce(key, kind, default, base) if kind in ("tolerances", "path_out") else default
    _check_ranges(values)
    canonical = json.dumps(raw, sort_keys=True, default=str)
    digest = hashlib.sha256(canonical.encode()).hexdigest()[:16]
    return RunConfig(values, base, digest)


def describe_schema() -> str:
    lines = []
    for key, (default, kind, desc) in SCHEMA.items():
        lines.append(f"{key:16s} {kind:10s} default={default!r:10s} {desc}")
    return "\n".join(lines)
