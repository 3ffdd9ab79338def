"""INI run configuration: every module default, overridable per section."""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, fields

from .energy import PowerChainConfig
from .radio import RadioModel, format_offset_table, parse_offset_table


class ConfigError(ValueError):
    pass


def _radio_defaults():
    m = RadioModel()
    return {
        "rss_at_1m_dbm": m.rss_at_1m_dbm,
        "path_loss_exponent": m.path_loss_exponent,
        "shadowing_sigma_db": m.shadowing_sigma_db,
        "min_distance_m": m.min_distance_m,
        "tx_offset_table": format_offset_table(m.tx_offset_table),
    }


def _energy_defaults():
    c = PowerChainConfig()
    out = {f.name: getattr(c, f.name) for f in fields(c) if f.name != "tx_event_scale"}
    out["tx_event_scale"] = format_offset_table(c.tx_event_scale)
    return out


DEFAULTS = {
    "radio": _radio_defaults(),
    "energy": _energy_defaults(),
    "identity": {"epoch_s": 900},
    "detection": {"tx_dbm": -8, "window_s": 60.0, "d_thresh_m": 2.0, "t_thresh_s": 600.0},
    "protocol": {"retention_s": 14 * 86400.0, "bucket_s": 3600.0, "sensitivity_dbm": -100.0},
    "simulation": {"width_m": 10.0, "height_m": 10.0, "packets_per_beacon": 10,
                   "trials": 10000, "seed": 0},
}


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, section):
        return self.values[section]

    def radio_model(self) -> RadioModel:
        r = self.values["radio"]
        return RadioModel(r["rss_at_1m_dbm"], r["path_loss_exponent"], r["shadowing_sigma_db"],
                          r["min_distance_m"], parse_offset_table(r["tx_offset_table"]))

    def power_chain(self) -> PowerChainConfig:
        e = dict(self.values["energy"])
        e["tx_event_scale"] = parse_offset_table(e["tx_event_scale"])
        return PowerChainConfig(**e)

    def dump(self) -> str:
        cp = configparser.ConfigParser()
        for section, vals in self.values.items():
            cp[section] = {k: _fmt(v) for k, v in vals.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(default, text: str, where: str):
    try:
        if isinstance(default, bool):
            return text.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {text!r} as {type(default).__name__}") from None
    return text.strip()


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Merge defaults, an optional INI file and ``{section: {key: value}}`` overrides."""
    values = {s: dict(v) for s, v in DEFAULTS.items()}
    if path is not None:
        cp = configparser.ConfigParser()
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in cp.sections():
            if section not in values:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, text in cp.items(section):
                if key not in values[section]:
                    raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
                values[section][key] = _coerce(DEFAULTS[section][key], text, f"[{section}] {key}")
    for section, kv in (overrides or {}).items():
        for key, v in kv.items():
            if v is not None:
                values[section][key] = v
    cfg = RunConfig(values)
    try:
        cfg.radio_model()
        cfg.power_chain()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg
