"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable, Mapping

from .core import GAMMA1, GAMMA_PHI, SUBSETS, PhysicsParams, QubitState
from .experiments import load_presets

ENV_PREFIX = "QTRAJ_"
MODES = ("generate", "reconstruct", "average", "validate", "histogram", "sweep", "grid")
FORMATS = ("csv", "ndjson", "bin")
PLANE_NAMES = ("xy", "xz", "yz")

INITIAL_STATES = {
    "g": (0.0, 0.0, -1.0),
    "e": (0.0, 0.0, 1.0),
    "+x": (1.0, 0.0, 0.0),
    "-x": (-1.0, 0.0, 0.0),
    "+y": (0.0, 1.0, 0.0),
    "-y": (0.0, -1.0, 0.0),
}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        self.line = line
        self.key = key
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


def _float(text: str) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise ValueError("value must be finite")
    return v


def _efficiency(text: str) -> float:
    v = _float(text)
    if not 0 <= v <= 1:
        raise ValueError(f"{v} is outside [0, 1]")
    return v


def _rate(text: str) -> float:
    v = _float(text)
    if v < 0:
        raise ValueError("rates must be >= 0")
    return v


def _int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        v = float(text)
        if not v.is_integer():
            raise ValueError("value must be an integer") from None
        return int(v)


def _choice(options) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(_float(t) for t in text.replace(",", " ").split())


def _plane_list(text: str) -> tuple[str, ...]:
    planes = tuple(t for t in text.replace(",", " ").split())
    for p in planes:
        if p not in PLANE_NAMES:
            raise ValueError(f"unknown plane {p!r}; expected some of {', '.join(PLANE_NAMES)}")
    return planes


def _str(text: str) -> str:
    return text


def _sign(text: str) -> int:
    if text not in ("1", "+1", "-1"):
        raise ValueError("expected 1 or -1")
    return int(text)


# key -> (parser, default); default None means "no default"
KEYS: dict[str, tuple[Callable, object]] = {
    "gamma1_per_us": (_rate, GAMMA1),
    "gamma_d_per_us": (_rate, None),
    "gamma_phi_per_us": (_rate, GAMMA_PHI),
    "rabi_per_us": (_float, None),
    "eta_f": (_efficiency, 0.14),
    "eta_d": (_efficiency, 0.34),
    "dt_record_us": (_float, 0.1),
    "dt_int_us": (_float, 0.01),
    "duration_us": (_float, 20.0),
    "n_traj": (_int, None),
    "master_seed": (_int, None),
    "subset": (_choice(SUBSETS), "uvw"),
    "mode": (_choice(MODES), None),
    "preset": (_choice(("fig1", "zeno", "fig2a", "fig2b")), None),
    "w_sign": (_sign, 1),
    "initial_state": (_choice(tuple(INITIAL_STATES)), "g"),
    "validation_time_us": (_float, 10.0),
    "bin_width": (_float, 0.01),
    "taus_us": (_float_list, (6.5,)),
    "planes": (_plane_list, PLANE_NAMES),
    "hist_bins": (_int, 61),
    "overlay_trim_us": (_float, 0.0),
    "sweep_half_width": (_float, 0.05),
    "sweep_step": (_float, 0.01),
    "records_file": (_str, None),
    "grid_file": (_str, None),
    "chunk_size": (_int, 2500),
    "workers": (_int, 1),
    "format": (_choice(FORMATS), "csv"),
    "out_dir": (_str, "out"),
}

REQUIRED = ("mode", "n_traj", "master_seed")
NEEDS_PRESET_OR = ("rabi_per_us", "gamma_d_per_us")


@dataclass(frozen=True)
class RunConfig:
    params: PhysicsParams
    n_traj: int
    master_seed: int
    subset: str
    mode: str
    out_dir: str
    format: str
    workers: int
    options: Mapping[str, object] = field(default_factory=dict)
    resolved: Mapping[str, object] = field(default_factory=dict)

    def option(self, key: str):
        if key not in KEYS:
            raise KeyError(key)
        return self.options.get(key)

    def with_overrides(self, **values) -> RunConfig:
        merged = dict(self.resolved)
        merged.update({k: v for k, v in values.items() if v is not None})
        return _build(merged, {})


def parse_lines(text: str) -> dict[str, tuple[str, int]]:
    """Split config text into ``{key: (raw value, line number)}``."""
    out: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno, key)
        if key in out:
            raise ConfigError(f"duplicate key {key!r} (first set on line {out[key][1]})", lineno, key)
        if not value:
            raise ConfigError(f"empty value for {key!r}", lineno, key)
        out[key] = (value, lineno)
    return out


def _convert(key: str, raw: str, line: int | None):
    try:
        return KEYS[key][0](raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key} = {raw!r}: {exc}", line, key) from None


def parse_config(text: str, env: Mapping[str, str] | None = None,
                 overrides: Mapping[str, object] | None = None) -> RunConfig:
    """Parse and validate a run configuration.

    Precedence, lowest first: key defaults, preset, file, environment
    (``QTRAJ_<KEY>``), ``overrides``.  Any failure raises :class:`ConfigError`
    naming the key and, for file values, the line.
    """
    entries = parse_lines(text)
    values: dict[str, object] = {}
    lines: dict[str, int | None] = {}
    for key, (raw, lineno) in entries.items():
        values[key] = _convert(key, raw, lineno)
        lines[key] = lineno
    env = os.environ if env is None else env
    for key in KEYS:
        name = ENV_PREFIX + key.upper()
        if name in env:
            values[key] = _convert(key, env[name], None)
            lines[key] = None
    for key, v in (overrides or {}).items():
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", None, key)
        if v is not None:
            values[key] = _convert(key, v, None) if isinstance(v, str) else v
            lines[key] = None
    return _build(values, lines)


def _build(values: dict[str, object], lines: Mapping[str, int | None]) -> RunConfig:
    missing = [k for k in REQUIRED if k not in values]
    if "preset" not in values:
        missing += [k for k in NEEDS_PRESET_OR if k not in values]
    if missing:
        raise ConfigError(
            "missing required keys: " + ", ".join(missing)
            + f" (required: {', '.join(REQUIRED)}, plus {' and '.join(NEEDS_PRESET_OR)} unless a preset is given)"
        )
    resolved: dict[str, object] = {k: d for k, (_, d) in KEYS.items() if d is not None}
    if "preset" in values:
        entry = load_presets()["named"][values["preset"]]
        resolved.update(rabi_per_us=entry["rabi_per_us"], gamma_d_per_us=entry["gamma_d_per_us"])
    resolved.update(values)

    def where(key):
        return lines.get(key)

    for key in ("n_traj", "workers", "chunk_size", "hist_bins"):
        if resolved[key] < 1:
            raise ConfigError(f"{key} must be at least 1, got {resolved[key]}", where(key), key)
    for key in ("eta_f", "eta_d"):
        if not 0 <= resolved[key] <= 1:
            raise ConfigError(f"{key} = {resolved[key]} is outside [0, 1]", where(key), key)
    for key in ("gamma1_per_us", "gamma_d_per_us", "gamma_phi_per_us"):
        if resolved[key] < 0:
            raise ConfigError(f"{key} must be >= 0, got {resolved[key]}", where(key), key)
    if resolved["master_seed"] < 0:
        raise ConfigError("master_seed must be >= 0", where("master_seed"), "master_seed")

    try:
        params = PhysicsParams(
            gamma1=resolved["gamma1_per_us"],
            gamma_d=resolved["gamma_d_per_us"],
            gamma_phi=resolved["gamma_phi_per_us"],
            omega=2 * math.pi * resolved["rabi_per_us"],
            eta_f=resolved["eta_f"],
            eta_d=resolved["eta_d"],
            dt_record=resolved["dt_record_us"],
            dt_int=resolved["dt_int_us"],
            duration=resolved["duration_us"],
            initial_state=QubitState.from_bloch(*INITIAL_STATES[resolved["initial_state"]]),
            w_sign=resolved["w_sign"],
        )
    except ValueError as exc:
        raise ConfigError(f"invalid physics parameters: {exc}") from None

    t = resolved["validation_time_us"]
    if resolved["mode"] in ("validate", "sweep") and not 0 < t <= params.duration + 1e-9:
        raise ConfigError(f"validation_time_us = {t} must lie in (0, duration_us]",
                          where("validation_time_us"), "validation_time_us")
    if resolved["mode"] == "histogram":
        for tau in resolved["taus_us"]:
            if not 0 <= tau <= params.duration + 1e-9:
                raise ConfigError(f"taus_us entry {tau} is outside [0, duration_us]", where("taus_us"), "taus_us")

    options = {k: v for k, v in resolved.items()
               if k not in ("n_traj", "master_seed", "subset", "mode", "out_dir", "format", "workers")}
    return RunConfig(
        params, resolved["n_traj"], resolved["master_seed"], resolved["subset"], resolved["mode"],
        resolved["out_dir"], resolved["format"], resolved["workers"], options, resolved,
    )


def load_config(path: str, **kwargs) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, **kwargs)
