"""Scenario configuration: JSON schema, defaults and validation.

Every section is optional; missing keys take the defaults below. See
docs/config.md for the full schema.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..channel import ChannelParams
from ..fsmusic import Grid
from ..scene import Scene, scene_from_dict
from ..waveform import ArrayConfig, FmcwConfig

MODULATIONS = ("HFD", "DSSS_ONLY", "FSK")
ESTIMATORS = ("FS_MUSIC", "MUSIC")
SWEEP_AXES = ("distance", "snr", "n_targets", "absorption")


class ConfigError(ValueError):
    """Validation failure; the message starts with the offending field path."""


DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "trials": 20,
    "fmcw": {"f_c": 24e9, "bandwidth_b": 250e6, "chirp_t": 2.56e-3, "sample_rate": 100e3,
             "chirps_per_frame": 32},
    "array": {"n_antennas": 8, "spacing": None},
    "tag": {"code_length": 15, "samples_per_chip": 4, "channels_hz": [2e3, 5e3, 10e3],
            "n_hops": 3, "repetitions": 1, "fsk_freq_hz": 5e3, "dsss_carrier_hz": 5e3},
    "channel": {"tag_gain": 1.0, "target_scatter": 0.5},
    "noise": {"snr_db": 20.0, "reference_power": None},
    "receiver": {"range_tol_m": 0.3, "angle_tol_deg": 2.0, "match_angle_deg": 1.0,
                 "rlc_threshold_db": 8.0, "fs_lags": [0, 10, 20], "music_lags": [0, 8, 16, 24],
                 "rlc_lags": [0, 8, 24, 48, 72, 88, 96], "order_rule": "floor", "gap_ratio": 10.0,
                 "floor_ratio": 6.0, "forward_backward": True},
    "grid": {"d_min": 0.5, "d_max": 10.0, "d_step": 0.01, "eta_min_deg": -60.0,
             "eta_max_deg": 60.0, "eta_step_deg": 0.25},
    "scene": None,
    "generator": {"los": False, "n_reflectors": 3, "n_targets": 1, "target_range_m": [2.0, 7.0],
                  "target_angle_deg": [-20.0, 20.0], "absorption": 0.0, "scatter_coeff": 1.0,
                  "wall_length_m": [1.5, 3.0]},
    "methods": [["HFD", "FS_MUSIC"]],
    "sweep": None,
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"{where}: unknown key")
        if isinstance(base[k], dict) and v is not None:
            if not isinstance(v, dict):
                raise ConfigError(f"{where}: expected an object")
            out[k] = _merge(base[k], v, where + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass(frozen=True)
class ScenarioConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    # -- construction ---------------------------------------------------------
    @classmethod
    def from_dict(cls, d: dict | None = None) -> "ScenarioConfig":
        cfg = cls(_merge(DEFAULTS, d or {}))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config: file not found: {p}")
        try:
            d = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config: invalid JSON ({e})") from e
        if not isinstance(d, dict):
            raise ConfigError("config: top level must be an object")
        return cls.from_dict(d)

    def with_overrides(self, **over) -> "ScenarioConfig":
        """Return a copy with dotted-path overrides, e.g. {"noise.snr_db": 0}."""
        raw = copy.deepcopy(self.raw)
        for dotted, v in over.items():
            node = raw
            keys = dotted.split(".")
            for k in keys[:-1]:
                node = node[k]
            node[keys[-1]] = v
        cfg = ScenarioConfig(raw)
        cfg.validate()
        return cfg

    def set(self, dotted: str, value) -> "ScenarioConfig":
        return self.with_overrides(**{dotted: value})

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)

    # -- typed views ----------------------------------------------------------
    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def trials(self) -> int:
        return int(self.raw["trials"])

    @property
    def fmcw(self) -> FmcwConfig:
        return FmcwConfig(**self.raw["fmcw"])

    @property
    def array(self) -> ArrayConfig:
        a = self.raw["array"]
        spacing = a["spacing"] if a["spacing"] is not None else self.fmcw.wavelength / 2
        return ArrayConfig(int(a["n_antennas"]), float(spacing))

    @property
    def channel(self) -> ChannelParams:
        return ChannelParams(**self.raw["channel"])

    @property
    def grid(self) -> Grid:
        g = self.raw["grid"]
        return Grid(g["d_min"], g["d_max"], g["d_step"], math.radians(g["eta_min_deg"]),
                    math.radians(g["eta_max_deg"]), math.radians(g["eta_step_deg"]))

    @property
    def tag(self) -> dict:
        return self.raw["tag"]

    @property
    def receiver(self) -> dict:
        return self.raw["receiver"]

    @property
    def noise(self) -> dict:
        return self.raw["noise"]

    @property
    def snr_db(self) -> float:
        v = self.noise["snr_db"]
        return math.inf if v is None else float(v)

    @property
    def generator(self) -> dict:
        return self.raw["generator"]

    @property
    def scene(self) -> Scene | None:
        s = self.raw["scene"]
        return None if s is None else scene_from_dict(s)

    @property
    def methods(self) -> list[tuple[str, str]]:
        return [(m[0], m[1]) for m in self.raw["methods"]]

    @property
    def hop_period(self) -> int:
        return int(self.tag["code_length"]) * int(self.tag["samples_per_chip"])

    @property
    def tlc_len(self) -> int:
        t = self.tag
        return self.hop_period * int(t["n_hops"]) * int(t["repetitions"])

    # -- validation -----------------------------------------------------------
    def validate(self) -> None:
        r = self.raw

        def need(cond, where, msg):
            if not cond:
                raise ConfigError(f"{where}: {msg}")

        need(isinstance(r["trials"], int) and r["trials"] >= 1, "trials", "must be an integer >= 1")
        need(isinstance(r["seed"], int) and r["seed"] >= 0, "seed", "must be a non-negative integer")
        try:
            fm = self.fmcw
            self.array
        except (TypeError, ValueError) as e:
            raise ConfigError(f"fmcw/array: {e}") from e
        t = r["tag"]
        for k in ("code_length", "samples_per_chip", "n_hops", "repetitions"):
            need(isinstance(t[k], int) and t[k] >= 1, f"tag.{k}", "must be an integer >= 1")
        n = t["code_length"] + 1
        need(t["code_length"] >= 7 and n & (n - 1) == 0, "tag.code_length", "must be 2^n - 1 with n >= 3")
        need(len(t["channels_hz"]) >= 1 and all(f > 0 for f in t["channels_hz"]), "tag.channels_hz",
             "must be a non-empty list of positive frequencies")
        need(len(set(t["channels_hz"])) == len(t["channels_hz"]), "tag.channels_hz", "must be distinct")
        need(self.tlc_len <= fm.samples_per_chirp, "tag",
             f"TLC length {self.tlc_len} exceeds the {fm.samples_per_chirp} samples of one chirp")
        need(t["fsk_freq_hz"] > 0 and t["dsss_carrier_hz"] > 0, "tag", "carrier frequencies must be positive")
        rc = r["receiver"]
        need(rc["range_tol_m"] > 0 and rc["angle_tol_deg"] > 0 and rc["match_angle_deg"] > 0,
             "receiver", "tolerances must be positive")
        for k in ("fs_lags", "music_lags", "rlc_lags"):
            need(len(rc[k]) >= 1 and all(isinstance(x, int) and x >= 0 for x in rc[k]),
                 f"receiver.{k}", "must be non-negative integers")
        need(rc["order_rule"] in ("gap", "floor"), "receiver.order_rule", "must be 'gap' or 'floor'")
        need(rc["gap_ratio"] > 1 and rc["floor_ratio"] > 1, "receiver", "gap_ratio and floor_ratio must exceed 1")
        need(isinstance(rc["forward_backward"], bool), "receiver.forward_backward", "must be true or false")
        need(max(rc["fs_lags"]) < self.hop_period, "receiver.fs_lags", "must be shorter than one hop")
        g = r["grid"]
        need(0 < g["d_min"] < g["d_max"] and g["d_step"] > 0, "grid", "need 0 < d_min < d_max and d_step > 0")
        need(g["eta_min_deg"] < g["eta_max_deg"] and g["eta_step_deg"] > 0, "grid", "bad angle axis")
        snr = r["noise"]["snr_db"]
        need(snr is None or isinstance(snr, (int, float)), "noise.snr_db", "must be a number or null (noiseless)")
        gen = r["generator"]
        need(gen["n_reflectors"] >= 3, "generator.n_reflectors", "need >= 3 for multilateration")
        need(gen["n_targets"] >= 1, "generator.n_targets", "must be >= 1")
        lo, hi = gen["target_range_m"]
        need(0 < lo <= hi, "generator.target_range_m", "need 0 < lo <= hi")
        need(0 <= gen["absorption"] < 1, "generator.absorption", "must lie in [0, 1)")
        wl = gen["wall_length_m"]
        need(len(wl) == 2 and 0 < wl[0] <= wl[1], "generator.wall_length_m", "need 0 < lo <= hi")
        if r["scene"] is not None:
            try:
                sc = self.scene
            except (KeyError, TypeError, ValueError) as e:
                raise ConfigError(f"scene: {e}") from e
            need(len(sc.targets) >= 1, "scene.targets", "need at least one target")
        need(len(r["methods"]) >= 1, "methods", "need at least one method")
        for i, m in enumerate(r["methods"]):
            need(isinstance(m, (list, tuple)) and len(m) == 2, f"methods[{i}]", "must be [modulation, estimator]")
            need(m[0] in MODULATIONS, f"methods[{i}][0]", f"must be one of {MODULATIONS}")
            need(m[1] in ESTIMATORS, f"methods[{i}][1]", f"must be one of {ESTIMATORS}")
        sw = r["sweep"]
        if sw is not None:
            need(isinstance(sw, dict) and sw.get("axis") in SWEEP_AXES, "sweep.axis", f"must be one of {SWEEP_AXES}")
            need(len(sw.get("values", [])) >= 1, "sweep.values", "need at least one value")
