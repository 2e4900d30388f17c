"""Experiment configuration: line-oriented ``dotted.key = value`` text.

Values are Python literals (numbers, quoted strings, lists); ``true``/``false``
and bare words are accepted too. Every experiment kind has a schema of keys
with defaults, and a key outside the schema is an error. Physical quantities
carry their unit in the key name.
"""

from __future__ import annotations

import ast
import math
import hashlib
import re
from dataclasses import dataclass, field

KINDS = ("tmm-spectrum", "count-rate", "g2-model", "g2-zero-sweep", "hbt-sim",
         "lifetime-sim", "oracle-check")


class ConfigError(ValueError):
    """Invalid configuration; carries the source location when known."""

    def __init__(self, message: str, source: str = "", line: int | None = None, key: str = ""):
        self.source, self.line, self.key = source, line, key
        where = source
        if line is not None:
            where += f":{line}"
        prefix = f"{where}: " if where else ""
        if key:
            prefix += f"{key}: "
        super().__init__(prefix + message)


_DETECTOR = {
    "detector.I_c_uA": 29.0,
    "detector.tau_ns": 2.33,
    "detector.dead_time_ns": 3.0,
    "detector.nu_max": 0.20,
    "detector.nu_center_frac": 0.70,
    "detector.nu_width_frac": 0.03,
    # optional tabulated efficiency; overrides the sigmoid when non-empty
    "detector.efficiency_table_uA": [],
    "detector.efficiency_table_values": [],
    "detector.jitter_fwhm_ns": 0.062,
    "detector.dark_rate_cps": 0.1,
}

_SCENE = {
    "scene.signal_cps": 80e3,
    "scene.background_cps": 800.0,
    "scene.reference_qe": 1.0,
    "scene.excitation_rate_per_ns": 0.1 / 3.0,
}

_SCHEMAS = {
    "tmm-spectrum": {
        "stack.ambient": "vacuum",
        "stack.layer_materials": ["NbN", "SiO2"],
        "stack.layer_thicknesses_nm": [4.0, 160.0],
        "stack.layer_fill_factors": [0.6, 1.0],
        "stack.substrate": "Si",
        "sweep.wavelength_start_nm": 500.0,
        "sweep.wavelength_stop_nm": 1300.0,
        "sweep.wavelength_count": 81,
    },
    "count-rate": {
        **_DETECTOR,
        "count_rate.mode": "sweep",  # sweep | max-vs-bias | recovery
        "bias.regime": "current",  # current | voltage
        "bias.fracs": [0.62],
        "sweep.N_in_start_cps": 1e6,
        "sweep.N_in_stop_cps": 1e11,
        "sweep.N_in_count": 41,
        "voltage_reference.enabled": False,
        "voltage_reference.N_out_cps": 1e6,
        "recovery.N_out_cps": 123e6,
        "recovery.t_stop_ns": 15.0,
        "recovery.t_count": 151,
    },
    "g2-model": {
        **_SCENE,
        "emitter.lifetime_ns": 3.0,
        "scenario.name": "SSPD",
        "scenario.qe": 0.2,
        "scenario.dark_cps": 0.1,
        "scenario.jitter_fwhm_ns": 0.062,
        "curve.half_width_ns": 30.0,
        "curve.step_ns": 0.005,
    },
    "g2-zero-sweep": {
        **_SCENE,
        "sweep.lifetime_start_ns": 0.5,
        "sweep.lifetime_stop_ns": 30.0,
        "sweep.lifetime_count": 60,
        "sweep.lifetime_spacing": "log",  # log | linear
        # when non-empty, sweep QE at a fixed lifetime instead
        "sweep.qe_values": [],
        "sweep.qe_lifetime_ns": 3.0,
        "scenarios.names": ["SSPD"],
        "scenarios.qe": [0.2],
        "scenarios.dark_cps": [0.1],
        "scenarios.jitter_fwhm_ns": [0.062],
    },
    "hbt-sim": {
        **_DETECTOR,
        "emitter.lifetime_ns": 3.0,
        "emitter.pump_ratio": 0.1,
        "emitter.radiative_yield": 0.1,
        "sim.duration_ns": 25e9,
        "bias.frac": 0.9,
        "histogram.bin_width_ns": 1.0,
        "histogram.window_ns": 30.0,
    },
    "lifetime-sim": {
        **_DETECTOR,
        "emitter.lifetime_ns": 12.0,
        "pulses.sync_period_ns": 200.0,
        "pulses.count": 2 * 10**7,
        "pulses.excitation_prob": 0.5,
        "pulses.collection_eff": 0.1,
        "bias.frac": 0.9,
        "histogram.bin_width_ns": 0.5,
        "fit.start_ns": 2.0,
        "fit.stop_ns": 60.0,
    },
    "oracle-check": {
        **_DETECTOR,
        "oracle.fast": True,
    },
}

_COMMON = {"experiment": None, "seed": 1}


def schema(kind: str) -> dict:
    if kind not in _SCHEMAS:
        raise ConfigError(f"unknown experiment kind {kind!r}; valid kinds: {', '.join(KINDS)}",
                          key="experiment")
    return {**_COMMON, **_SCHEMAS[kind], "experiment": kind}


_BARE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.+\-/]*$")
_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*$")


def parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        if _BARE.match(text):
            return text
        raise ValueError(f"cannot parse value {text!r}") from None


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(format_value(x) for x in v) + "]"
    return repr(v)


def parse_lines(text: str, source: str = "<config>") -> dict[str, tuple[object, int]]:
    """key -> (value, line number). Duplicate keys are an error."""
    out: dict[str, tuple[object, int]] = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", source, no)
        key, _, val = line.partition("=")
        key = key.strip()
        if not _KEY.match(key):
            raise ConfigError(f"malformed key {key!r}", source, no)
        if key in out:
            raise ConfigError(f"duplicate key (first set on line {out[key][1]})", source, no, key)
        try:
            out[key] = (parse_value(val), no)
        except ValueError as err:
            raise ConfigError(str(err), source, no, key) from None
    return out


def _strip_comment(raw: str) -> str:
    # a '#' inside quotes is part of the value
    quote = None
    for i, ch in enumerate(raw):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch == "#":
            return raw[:i]
    return raw


def _coerce(key: str, value, default, source: str, line: int | None):
    def bad(msg):
        return ConfigError(msg, source, line, key)

    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise bad(f"expected true or false, got {value!r}")
        return value
    if isinstance(default, int):
        if (isinstance(value, bool) or not isinstance(value, (int, float))
                or not math.isfinite(value) or value != int(value)):
            raise bad(f"expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad(f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise bad(f"expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, (list, tuple)):
            raise bad(f"expected a list, got {value!r}")
        kind = _list_kind(key, default)
        items = []
        for x in value:
            if kind is str:
                if not isinstance(x, str):
                    raise bad(f"expected a list of strings, got item {x!r}")
                items.append(x)
            else:
                if isinstance(x, bool) or not isinstance(x, (int, float)):
                    raise bad(f"expected a list of numbers, got item {x!r}")
                items.append(float(x))
        return items
    raise bad(f"unsupported value {value!r}")


def _list_kind(key: str, default: list):
    if default:
        return str if isinstance(default[0], str) else float
    return str if key.endswith(("names", "materials")) else float


@dataclass
class ExperimentConfig:
    kind: str
    values: dict
    source: str = "<config>"
    lines: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    def error(self, key: str, message: str) -> ConfigError:
        return ConfigError(message, self.source, self.lines.get(key), key)

    def to_text(self) -> str:
        """Effective config (defaults filled in), stable key order."""
        keys = ["experiment", "seed"] + sorted(k for k in self.values if k not in _COMMON)
        return "".join(f"{k} = {format_value(self.values[k])}\n" for k in keys)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def build_config(text: str, source: str = "<config>", overrides: list[str] = (),
                 seed: int | None = None) -> ExperimentConfig:
    """Parse, apply ``key=value`` overrides, check keys and types, fill defaults."""
    raw = parse_lines(text, source)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value", "--set")
        key, _, val = item.partition("=")
        key = key.strip()
        if not _KEY.match(key):
            raise ConfigError(f"malformed key {key!r}", "--set")
        try:
            raw[key] = (parse_value(val), None)
        except ValueError as err:
            raise ConfigError(str(err), "--set", key=key) from None
    if "experiment" not in raw:
        raise ConfigError(f"missing 'experiment' key; valid kinds: {', '.join(KINDS)}", source)
    kind, kline = raw["experiment"]
    if not isinstance(kind, str) or kind not in _SCHEMAS:
        raise ConfigError(f"unknown experiment kind {kind!r}; valid kinds: {', '.join(KINDS)}",
                          source, kline, "experiment")
    sch = schema(kind)
    values = dict(sch)
    lines = {}
    for key, (val, line) in raw.items():
        if key not in sch:
            raise ConfigError(f"unknown key for experiment {kind!r}", source if line else "--set",
                              line, key)
        values[key] = _coerce(key, val, sch[key], source if line else "--set", line)
        lines[key] = line
    if seed is not None:
        values["seed"] = int(seed)
    if values["seed"] < 0:
        raise ConfigError("seed must be >= 0", source, lines.get("seed"), "seed")
    return ExperimentConfig(kind, values, source, lines)


def load_config(path, overrides: list[str] = (), seed: int | None = None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return build_config(text, str(path), overrides, seed)
