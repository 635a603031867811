"""Experiment configuration files.

Configs are sectioned INI files whose keys carry their units (``zeeman_uev``,
``t1_ms``, ...). Every key is optional except ``[meta] schema_version``;
missing keys fall back to the module defaults. Unknown sections or keys are
errors, so a typo never silently reverts to a default.
"""

from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .physics import PhysicalParams
from .qubit import GATE_LABELS, NOISE_MODELS, QubitParams

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, source: str = "<config>", line: int | None = None):
        self.source = source
        self.line = line
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


# (section, key) -> (target block, field name, scale to internal units)
_PHYSICAL = {
    ("device", "zeeman_uev"): ("zeeman_energy", 1.0),
    ("device", "electron_temperature_mk"): ("electron_temperature", 1.0),
    ("device", "fermi_offset_uev"): ("fermi_offset_delta", 1.0),
    ("device", "tunnel_rate_hz"): ("base_tunnel_rate", 1.0),
    ("device", "t1_ms"): ("t1_relaxation", 1e-3),
    ("device", "field_mt"): ("external_field", 1.0),
    ("sensor", "snr"): ("sensor_snr", 1.0),
    ("sensor", "bandwidth_hz"): ("sensor_bandwidth", 1.0),
    ("sensor", "level_occupied_e2h"): ("sensor_level_occupied", 1.0),
    ("sensor", "level_empty_e2h"): ("sensor_level_empty", 1.0),
    ("sensor", "sampling_rate_hz"): ("sampling_rate", 1.0),
    ("sensor", "settle_us"): ("settle_time", 1.0),
}

_QUBIT = {
    ("qubit", "rabi_mhz"): ("rabi_frequency", 1.0),
    ("qubit", "resonance_ghz"): ("resonance_frequency", 1.0),
    ("qubit", "t2_star_us"): ("t2_star", 1.0),
    ("qubit", "t2_hahn_us"): ("t2_hahn", 1.0),
    ("qubit", "sigma_f_mhz"): ("sigma_f", 1.0),
    ("qubit", "correlation_time_us"): ("correlation_time", 1.0),
}


@dataclass(frozen=True)
class DetectionSettings:
    read_window_us: float = 670.0
    blank_us: float | None = None  # None: blank the settle window
    threshold_e2h: float | None = None  # None: level midpoint
    threshold_points: int = 25
    window_grid_us: tuple[float, ...] = (100.0, 200.0, 300.0, 400.0, 500.0, 670.0, 800.0, 1000.0)


@dataclass(frozen=True)
class ExperimentSettings:
    trace_shots: int = 20000
    delta_grid_uev: tuple[float, ...] = (5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 39.5, 45.0, 50.0, 55.0, 60.0, 65.0, 70.0, 75.0, 78.0)
    delta_shots: int = 4000
    chevron_detuning_mhz: tuple[float, ...] = (-4.0, 4.0, 81)
    chevron_tau_us: tuple[float, ...] = (0.0, 2.0, 81)
    chevron_shots: int = 0
    ramsey_points: int = 24
    ramsey_shots: int = 4000
    hahn_points: int = 24
    hahn_shots: int = 4000
    rb_lengths: tuple[int, ...] = (1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096)
    rb_sequences: int = 200
    rb_shots: int = 100
    rb_bootstrap: int = 200
    rb_readout: str = "ideal"
    irb_gates: tuple[str, ...] = ("X", "X2", "-X", "Y", "Y2", "-Y")


@dataclass(frozen=True)
class ExperimentConfig:
    physical: PhysicalParams
    qubit: QubitParams
    detection: DetectionSettings
    experiment: ExperimentSettings
    seed: int = 0
    source: str = "<config>"
    sha256: str = field(default="", compare=False)


_DETECTION_KEYS = {
    "read_window_us": float,
    "blank_us": "optional_float",
    "threshold_e2h": "optional_float",
    "threshold_points": int,
    "window_grid_us": "floats",
}

_EXPERIMENT_KEYS = {
    "trace_shots": int,
    "delta_grid_uev": "floats",
    "delta_shots": int,
    "chevron_detuning_mhz": "range",
    "chevron_tau_us": "range",
    "chevron_shots": int,
    "ramsey_points": int,
    "ramsey_shots": int,
    "hahn_points": int,
    "hahn_shots": int,
    "rb_lengths": "ints",
    "rb_sequences": int,
    "rb_shots": int,
    "rb_bootstrap": int,
    "rb_readout": str,
    "irb_gates": "strs",
}


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """Line number of every ``key = value`` entry, keyed by (section, key)."""
    out: dict[tuple[str, str], int] = {}
    section = ""
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            out.setdefault((section, ""), n)
            continue
        m = re.match(r"([^=:]+)[=:]", line)
        if m:
            out[(section, m.group(1).strip().lower())] = n
    return out


def _split(value: str) -> list[str]:
    return [v for v in re.split(r"[,\s]+", value.strip()) if v]


def _convert(kind, value: str):
    if kind is float:
        return float(value)
    if kind is int:
        return int(value)
    if kind is str:
        return value.strip()
    if kind == "optional_float":
        return None if value.strip().lower() in ("", "auto", "none") else float(value)
    if kind == "floats":
        return tuple(float(v) for v in _split(value))
    if kind == "ints":
        return tuple(int(v) for v in _split(value))
    if kind == "strs":
        return tuple(_split(value))
    if kind == "range":
        lo, hi, n = _split(value)
        return (float(lo), float(hi), int(n))
    raise AssertionError(kind)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate config text; raises :class:`ConfigError`."""
    lines = _key_lines(text)
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str.lower
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        if line is None and getattr(exc, "errors", None):
            line = exc.errors[0][0]
        raise ConfigError(str(exc).splitlines()[0], source, line) from None

    def fail(msg: str, section: str, key: str = "") -> ConfigError:
        return ConfigError(msg, source, lines.get((section, key)) or lines.get((section, "")))

    known = {"meta", "device", "sensor", "detection", "qubit", "experiment"}
    for section in parser.sections():
        if section.lower() not in known:
            raise fail(f"unknown section [{section}]", section.lower())

    if not parser.has_option("meta", "schema_version"):
        raise ConfigError("missing [meta] schema_version", source, lines.get(("meta", "")))
    try:
        version = int(parser.get("meta", "schema_version"))
    except ValueError:
        raise fail("schema_version must be an integer", "meta", "schema_version") from None
    if version != SCHEMA_VERSION:
        raise fail(f"unsupported schema_version {version} (expected {SCHEMA_VERSION})", "meta", "schema_version")

    allowed = {
        "meta": {"schema_version", "seed"},
        "device": {k for s, k in _PHYSICAL if s == "device"},
        "sensor": {k for s, k in _PHYSICAL if s == "sensor"},
        "qubit": {k for s, k in _QUBIT} | {"noise_model"},
        "detection": set(_DETECTION_KEYS),
        "experiment": set(_EXPERIMENT_KEYS),
    }
    for section in parser.sections():
        for key in parser.options(section):
            if key not in allowed[section.lower()]:
                raise fail(f"unknown key {key!r} in [{section}]", section.lower(), key)

    def read(section: str, key: str, kind):
        raw = parser.get(section, key)
        try:
            return _convert(kind, raw)
        except (ValueError, TypeError):
            raise fail(f"cannot parse {key} = {raw!r}", section, key) from None

    def build(cls, mapping, extra=None):
        kwargs = dict(extra or {})
        where: dict[str, tuple[str, str]] = {}
        for (section, key), (name, scale) in mapping.items():
            where[name] = (section, key)
            if parser.has_option(section, key):
                kwargs[name] = read(section, key, float) * scale
        try:
            return cls(**kwargs)
        except ValueError as exc:
            msg = str(exc)
            # point at a key named in the message that the file actually sets
            for name, (section, key) in where.items():
                if name in msg and parser.has_option(section, key):
                    raise fail(msg, section, key) from None
            section = next(iter(mapping))[0]
            raise fail(msg, section) from None

    qubit_extra = {}
    if parser.has_option("qubit", "noise_model"):
        model = read("qubit", "noise_model", str)
        if model not in NOISE_MODELS:
            raise fail(f"noise_model must be one of {NOISE_MODELS}", "qubit", "noise_model")
        qubit_extra["noise_model"] = model
    physical = build(PhysicalParams, _PHYSICAL)
    qubit = build(QubitParams, _QUBIT, qubit_extra)

    det_kwargs = {k: read("detection", k, kind) for k, kind in _DETECTION_KEYS.items() if parser.has_option("detection", k)}
    exp_kwargs = {k: read("experiment", k, kind) for k, kind in _EXPERIMENT_KEYS.items() if parser.has_option("experiment", k)}
    detection = DetectionSettings(**det_kwargs)
    experiment = ExperimentSettings(**exp_kwargs)
    _validate_detection(detection, physical, fail)
    _validate_experiment(experiment, fail)

    seed = read("meta", "seed", int) if parser.has_option("meta", "seed") else 0
    if seed < 0:
        raise fail("seed must be non-negative", "meta", "seed")
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return ExperimentConfig(physical, qubit, detection, experiment, seed, source, digest)


def _validate_detection(d: DetectionSettings, p: PhysicalParams, fail) -> None:
    blank = p.settle_time if d.blank_us is None else d.blank_us
    if not d.read_window_us > blank >= 0:
        raise fail("need read_window_us > blank_us >= 0", "detection", "read_window_us")
    if d.threshold_points < 3:
        raise fail("threshold_points must be >= 3", "detection", "threshold_points")
    grid = d.window_grid_us
    if not grid or any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] <= blank:
        raise fail("window_grid_us must be increasing and above the blanking time", "detection", "window_grid_us")


def _validate_experiment(e: ExperimentSettings, fail) -> None:
    for key in ("trace_shots", "delta_shots", "ramsey_points", "ramsey_shots", "hahn_points", "hahn_shots", "rb_shots"):
        if getattr(e, key) < 1:
            raise fail(f"{key} must be >= 1", "experiment", key)
    if e.chevron_shots < 0:
        raise fail("chevron_shots must be >= 0", "experiment", "chevron_shots")
    if e.rb_sequences < 2:
        raise fail("rb_sequences must be >= 2", "experiment", "rb_sequences")
    if e.rb_bootstrap < 100:
        raise fail("rb_bootstrap must be >= 100", "experiment", "rb_bootstrap")
    lengths = e.rb_lengths
    if not lengths or lengths[0] < 1 or any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise fail("rb_lengths must be positive and strictly increasing", "experiment", "rb_lengths")
    if e.rb_readout not in ("ideal", "trace"):
        raise fail("rb_readout must be 'ideal' or 'trace'", "experiment", "rb_readout")
    for g in e.irb_gates:
        if g not in GATE_LABELS:
            raise fail(f"unknown gate {g!r}", "experiment", "irb_gates")
    for key in ("chevron_detuning_mhz", "chevron_tau_us"):
        lo, hi, n = getattr(e, key)
        if not (hi > lo and n >= 2):
            raise fail(f"{key} needs start < stop and at least 2 points", "experiment", key)
    if e.chevron_tau_us[0] < 0:
        raise fail("chevron_tau_us must be non-negative", "experiment", "chevron_tau_us")


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    return parse_config(text, str(path))


def bundled_config_text() -> str:
    return resources.files("spinqubit").joinpath("data/paper.cfg").read_text(encoding="utf-8")


def load_bundled() -> ExperimentConfig:
    return parse_config(bundled_config_text(), "paper.cfg")
