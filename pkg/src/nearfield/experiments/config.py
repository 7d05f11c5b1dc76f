"""Scenario files.

A scenario is an INI file. Angles are in degrees, ranges in meters and SNR in
dB. Example::

    [array]
    num_elements = 513
    carrier_hz = 30e9
    spacing_wavelengths = 0.5

    [sources]
    # range_m, angle_deg[, power]
    s1 = 3, 6
    s2 = 32, 20

    [simulation]
    snapshots = 200
    snr_db = 10
    seed = 0

    [grid]
    angle_min_deg = -20
    angle_max_deg = 40
    angle_step_deg = 0.1
    range_min_m = 0
    range_max_m = 40
    range_step_m = 0.2

    [localizer]
    fft_size = 1024

    [output]
    dir = results

Every section except ``[array]`` is optional.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from ..array import ArrayGeometry, SourceTruth, snr_to_noise_var
from ..errors import ConfigError, NearFieldError
from ..localizer import LocalizerConfig
from ..music import GridSpec

_SECTIONS = {
    "array": {"num_elements", "carrier_hz", "spacing_wavelengths", "spacing_m"},
    "sources": None,  # free keys
    "simulation": {"snapshots", "snr_db", "seed", "trials", "snr_list", "repetitions"},
    "grid": {"angle_min_deg", "angle_max_deg", "angle_step_deg",
             "range_min_m", "range_max_m", "range_step_m"},
    "localizer": {"fft_size", "spread_margin_angle", "spread_margin_distance", "peak_prominence",
                  "retry_prominence_factor", "refine_angle_step_deg", "refine_range_step_m",
                  "max_expansions", "expansion_factor", "peak_gain_db", "refine_iterations"},
    "output": {"dir"},
}


@dataclass(frozen=True)
class GridParams:
    angle_min_deg: float = -20.0
    angle_max_deg: float = 40.0
    angle_step_deg: float = 0.1
    range_min_m: float = 0.0
    range_max_m: float = 40.0
    range_step_m: float = 0.2

    def build(self) -> GridSpec:
        return GridSpec.from_degrees(self.angle_min_deg, self.angle_max_deg, self.angle_step_deg,
                                     self.range_min_m, self.range_max_m, self.range_step_m)


@dataclass(frozen=True)
class LocalizerParams:
    fft_size: int = 1024
    spread_margin_angle: float = 0.5
    spread_margin_distance: float = 0.1
    peak_prominence: float = 0.05
    retry_prominence_factor: float = 0.5
    refine_angle_step_deg: Optional[float] = None
    refine_range_step_m: Optional[float] = None
    max_expansions: int = 3
    expansion_factor: float = 2.0
    peak_gain_db: float = 10.0
    refine_iterations: int = 10


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to reproduce a run, in presentation units."""

    num_elements: int
    carrier_hz: float
    spacing_wavelengths: float = 0.5
    spacing_m: Optional[float] = None
    sources: Tuple[Tuple[float, float, float], ...] = ()   # (range_m, angle_deg, power)
    snapshots: int = 200
    snr_db: float = 10.0
    seed: int = 0
    trials: int = 20
    snr_list: Tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0)
    repetitions: int = 3
    grid: GridParams = field(default_factory=GridParams)
    localizer: LocalizerParams = field(default_factory=LocalizerParams)
    output_dir: str = "results"

    def __post_init__(self):
        # surfaces every physical constraint at load time
        self.geometry()
        self.truth()
        self.localizer_config().validate(self.geometry())
        if self.snapshots < 1:
            raise ConfigError(f"[simulation] snapshots: need at least 1, got {self.snapshots}")
        if self.trials < 1:
            raise ConfigError(f"[simulation] trials: need at least 1, got {self.trials}")
        if not self.snr_list:
            raise ConfigError("[simulation] snr_list: needs at least one value")
        if self.repetitions < 3:
            raise ConfigError(f"[simulation] repetitions: need at least 3, got {self.repetitions}")

    @property
    def num_sources(self) -> int:
        return len(self.sources)

    @property
    def wavelength(self) -> float:
        return self.geometry().wavelength

    def geometry(self) -> ArrayGeometry:
        geom = ArrayGeometry.from_carrier(self.num_elements, self.carrier_hz,
                                          self.spacing_wavelengths)
        if self.spacing_m is not None:
            geom = ArrayGeometry(self.num_elements, self.spacing_m, geom.wavelength)
        return geom

    def truth(self) -> SourceTruth:
        return SourceTruth.from_degrees(self.sources)

    def grid_spec(self) -> GridSpec:
        return self.grid.build()

    def noise_var(self, snr_db: Optional[float] = None) -> float:
        return snr_to_noise_var(self.snr_db if snr_db is None else snr_db)

    def localizer_config(self) -> LocalizerConfig:
        p = self.localizer
        steps = (None if p.refine_angle_step_deg is None else float(np.deg2rad(p.refine_angle_step_deg)),
                 p.refine_range_step_m)
        return LocalizerConfig(
            grid=self.grid_spec(), fft_size=p.fft_size,
            spread_margin_angle=p.spread_margin_angle,
            spread_margin_distance=p.spread_margin_distance,
            peak_prominence=p.peak_prominence,
            retry_prominence_factor=p.retry_prominence_factor,
            refine_steps=steps, max_expansions=p.max_expansions,
            expansion_factor=p.expansion_factor, peak_gain_db=p.peak_gain_db,
            refine_iterations=p.refine_iterations)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        """Short digest of the canonical scenario content (output paths excluded)."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **changes) -> "ScenarioConfig":
        d = {**self.to_dict(), **changes}
        return from_dict(d)


def from_dict(d: dict) -> ScenarioConfig:
    d = dict(d)
    if isinstance(d.get("grid"), dict):
        d["grid"] = GridParams(**d["grid"])
    if isinstance(d.get("localizer"), dict):
        d["localizer"] = LocalizerParams(**d["localizer"])
    d["sources"] = tuple(tuple(float(v) for v in s) for s in d.get("sources", ()))
    d["snr_list"] = tuple(float(v) for v in d.get("snr_list", ()))
    return ScenarioConfig(**d)


def _floats(text: str, where: str) -> List[float]:
    parts = [p.strip() for p in text.replace(";", ",").split(",") if p.strip()]
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"{where}: expected comma-separated numbers, got {text!r}") from None


def _typed(section: str, key: str, raw: str, proto):
    where = f"[{section}] {key}"
    try:
        if isinstance(proto, bool):
            raise TypeError
        if isinstance(proto, int):
            v = float(raw)
            if v != int(v):
                raise ValueError
            return int(v)
        return float(raw)
    except (TypeError, ValueError, OverflowError):
        raise ConfigError(f"{where}: cannot read {raw!r} as {type(proto).__name__}") from None


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    """Parse scenario text; every failure names the file and the section/key or line."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}".replace("\n", " ")) from None

    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"{source}: unknown section [{sec}]")
        allowed = _SECTIONS[sec]
        if allowed is not None:
            for key in cp[sec]:
                if key not in allowed:
                    raise ConfigError(f"{source}: [{sec}] {key}: unknown key")
    if not cp.has_section("array"):
        raise ConfigError(f"{source}: missing section [array]")

    arr = cp["array"]
    kw: dict = {}
    for key in ("num_elements", "carrier_hz"):
        if key not in arr:
            raise ConfigError(f"{source}: [array] {key}: required")
    kw["num_elements"] = _typed("array", "num_elements", arr["num_elements"], 0)
    kw["carrier_hz"] = _typed("array", "carrier_hz", arr["carrier_hz"], 0.0)
    if "spacing_wavelengths" in arr:
        kw["spacing_wavelengths"] = _typed("array", "spacing_wavelengths", arr["spacing_wavelengths"], 0.0)
    if "spacing_m" in arr:
        kw["spacing_m"] = _typed("array", "spacing_m", arr["spacing_m"], 0.0)

    if cp.has_section("sources"):
        srcs = []
        for key, raw in cp["sources"].items():
            vals = _floats(raw, f"[sources] {key}")
            if len(vals) not in (2, 3):
                raise ConfigError(f"[sources] {key}: expected 'range_m, angle_deg[, power]', got {raw!r}")
            srcs.append((vals[0], vals[1], vals[2] if len(vals) == 3 else 1.0))
        kw["sources"] = tuple(srcs)

    defaults = ScenarioConfig.__dataclass_fields__
    if cp.has_section("simulation"):
        sim = cp["simulation"]
        for key, raw in sim.items():
            if key == "snr_list":
                kw["snr_list"] = tuple(_floats(raw, "[simulation] snr_list"))
            else:
                kw[key] = _typed("simulation", key, raw, defaults[key].default)

    for sec, cls in (("grid", GridParams), ("localizer", LocalizerParams)):
        if cp.has_section(sec):
            proto = cls()
            vals = {}
            for key, raw in cp[sec].items():
                default = getattr(proto, key)
                vals[key] = _typed(sec, key, raw, 0.0 if default is None else default)
            kw[sec] = cls(**vals)
    if cp.has_section("output") and "dir" in cp["output"]:
        kw["output_dir"] = cp["output"]["dir"]

    try:
        return ScenarioConfig(**kw)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    except NearFieldError as exc:
        # geometry/grid violations keep their own category
        raise type(exc)(f"{source}: {exc}") from None


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config(text, str(path))


def reference_scenario(num_elements: int = 513, **changes) -> ScenarioConfig:
    """The four-source 30 GHz scene: three close sources near 3-5 m and one at 32 m."""
    base = ScenarioConfig(
        num_elements=num_elements, carrier_hz=30e9,
        sources=((3.0, 6.0, 1.0), (4.0, 7.0, 1.0), (5.0, 8.0, 1.0), (32.0, 20.0, 1.0)))
    return base.replace(**changes) if changes else base
