"""Sectioned plain-text run configuration (INI syntax) with strict key checking."""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import fields
from pathlib import Path

from .lqi import LqiConfig
from .model import DslrConfig
from .pairing import PairThreshold
from .scan import SensorSpec


def _section_from(cls, skip=()):
    return {f.name: f.default for f in fields(cls) if f.name not in skip}


DEFAULTS = {
    "run": {"seed": 0, "threads": 1},
    "sensor": {"n_elevation_bins": 16, "n_azimuth_bins": 64, "elevation_fov_min": -15.0,
               "elevation_fov_max": 10.0, "max_range": 50.0},
    "world": {"seed": 0, "n_boxes": 4, "n_pillars": 4, "room_x": 36.0, "room_y": 24.0, "duration": 60.0},
    "path": {"n_poses": 300, "a": 11.0, "b": 5.8, "dt": 0.1, "laps": 1.0},
    "target": {"seed": 7, "n_boxes": 6, "n_poses": 200, "a": 10.5, "b": 6.2},
    "pairing": {"delta_trans": 0.1, "delta_rot": 5.0, "mode": "all_matches", "split": (0.8, 0.1, 0.1)},
    "model": _section_from(DslrConfig, skip=("height", "width", "seed")),
    "lqi": _section_from(LqiConfig, skip=("seed",)),
    "eval": {"emd_cap": 256},
    "sweep": {"sigmas": (0.0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.1),
              "seeds": (0, 1, 2), "max_scans": 40},
}


def _convert(default, raw, where):
    try:
        if isinstance(default, bool):
            v = raw.strip().lower()
            if v not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"not a boolean: {raw!r}")
            return v in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            return tuple(kind(x) for x in raw.replace(",", " ").split())
        return raw.strip()
    except ValueError as exc:
        raise ValueError(f"{where}: {exc}") from None


def _render(v):
    if isinstance(v, tuple):
        return ", ".join(repr(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


class RunConfig:
    """Fully resolved settings; build from defaults, a config file and overrides."""

    def __init__(self, values=None):
        self.values = {s: dict(d) for s, d in DEFAULTS.items()}
        for section, items in (values or {}).items():
            for key, value in items.items():
                self.set(section, key, value)
        # constructing the typed views validates the combination
        self.sensor, self.model, self.lqi, self.threshold  # noqa: B018

    def set(self, section, key, value, where="override"):
        if section not in DEFAULTS:
            raise ValueError(f"{where}: unknown section [{section}]")
        if key not in DEFAULTS[section]:
            raise ValueError(f"{where}: unknown key {key!r} in [{section}]")
        default = DEFAULTS[section][key]
        if isinstance(value, str) and not isinstance(default, str):
            value = _convert(default, value, f"{where} [{section}] {key}")
        self.values[section][key] = value

    @classmethod
    def from_text(cls, text, source="<config>"):
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text, source=source)
        except configparser.Error as exc:
            raise ValueError(f"{source}: {exc}".replace("\n", " ")) from None
        cfg = cls()
        for section in cp.sections():
            for key, raw in cp[section].items():
                cfg.set(section, key, raw, where=source)
        RunConfig(cfg.values)
        return cfg

    @classmethod
    def load(cls, path=None, overrides=None):
        cfg = cls.from_text(Path(path).read_text(encoding="utf-8"), str(path)) if path else cls()
        for (section, key), value in (overrides or {}).items():
            cfg.set(section, key, value)
        return RunConfig(cfg.values)

    def to_text(self) -> str:
        lines = []
        for section, items in self.values.items():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {_render(v)}" for k, v in items.items())
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    @property
    def seed(self):
        return self.values["run"]["seed"]

    @property
    def threads(self):
        return self.values["run"]["threads"]

    def section(self, name):
        return dict(self.values[name])

    @property
    def sensor(self) -> SensorSpec:
        s = self.values["sensor"]
        return SensorSpec(s["n_elevation_bins"], s["n_azimuth_bins"],
                          (s["elevation_fov_min"], s["elevation_fov_max"]), s["max_range"])

    @property
    def model(self) -> DslrConfig:
        spec = self.sensor
        return DslrConfig(height=spec.n_elevation_bins, width=spec.n_azimuth_bins, seed=self.seed,
                          **self.values["model"])

    @property
    def lqi(self) -> LqiConfig:
        return LqiConfig(seed=self.seed, **self.values["lqi"])

    @property
    def threshold(self) -> PairThreshold:
        p = self.values["pairing"]
        return PairThreshold(p["delta_trans"], p["delta_rot"], p["mode"])
