"""Line-oriented ``key = value`` experiment configuration.

A configuration file has up to three sections::

    [grid]
    M = 16
    N = 8
    delta_f = 15000

    [channel]
    profile = vehicular-b-clipped
    f_max = 4000

    [sim]
    snr_db = 5, 10, 15
    frames = 200
    equalizers = zf_low, zf_direct

Missing keys take the full-scale defaults of :class:`SimConfig`.  Result
files embed the resolved configuration as ``# ``-prefixed lines and can be
passed back as a configuration.
"""

from __future__ import annotations

import configparser
import dataclasses
from pathlib import Path

from .errors import ProfileError
from .modem_sim import SimConfig

SCHEMA = {
    "grid": {"M": int, "N": int, "delta_f": float},
    "channel": {"profile": str, "f_max": float, "cp_len": int},
    "sim": {
        "snr_db": "floats",
        "frames": int,
        "seed": int,
        "equalizers": "names",
        "qam_order": int,
        "check_equivalence": bool,
    },
}
_SECTION_OF = {key: section for section, keys in SCHEMA.items() for key in keys}
ECHO_MAGIC = "# otfseq sweep"


class ConfigError(ValueError):
    """Invalid configuration; ``lineno`` and ``field`` locate the problem when known."""

    def __init__(self, message, lineno=None, field=None):
        super().__init__(message)
        self.lineno = lineno
        self.field = field


def _convert(field, kind, raw):
    raw = raw.strip()
    try:
        if raw.lower() in ("", "none") and field == "cp_len":
            return None
        if kind == "floats":
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if kind == "names":
            return tuple(x.strip() for x in raw.split(",") if x.strip())
        if kind is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            value = float(raw)
            if value != int(value):
                raise ValueError(raw)
            return int(value)
        return kind(raw)
    except ValueError:
        expected = {"floats": "comma-separated numbers", "names": "comma-separated names"}.get(kind, getattr(kind, "__name__", kind))
        raise ConfigError(f"{field}: cannot parse {raw!r} as {expected}", field=field) from None


def _resolve_key(key):
    if "." in key:
        section, name = key.split(".", 1)
        if section not in SCHEMA or name not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r}", field=key)
        return section, name
    if key not in _SECTION_OF:
        raise ConfigError(f"unknown key {key!r}; known keys: {', '.join(sorted(_SECTION_OF))}", field=key)
    return _SECTION_OF[key], key


def _read_text(path):
    text = Path(path).read_text()
    lines = text.splitlines()
    if lines and lines[0].startswith(ECHO_MAGIC):
        # result file: the configuration is the block of "# " lines after the magic
        echo = []
        for ln in lines[1:]:
            if not ln.startswith("#"):
                break
            echo.append(ln[2:] if ln.startswith("# ") else ln[1:])
        return "\n".join(echo)
    return text


def parse_config(path=None, overrides=()) -> SimConfig:
    """Build a validated :class:`SimConfig` from a file and ``KEY=VALUE`` overrides.

    Raises
    ------
    ConfigError
        For a missing file, a syntax error (with line number), an unknown key,
        an unparseable value or a violated invariant (naming the field).
    """
    values = {}
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(_read_text(path), source=str(path))
        except configparser.MissingSectionHeaderError as exc:
            raise ConfigError(f"line {exc.lineno}: key outside of a [section]", lineno=exc.lineno) from None
        except configparser.ParsingError as exc:
            lineno = exc.errors[0][0] if exc.errors else None
            raise ConfigError(f"line {lineno}: cannot parse {exc.errors[0][1] if exc.errors else ''}", lineno=lineno) from None
        except configparser.Error as exc:
            raise ConfigError(str(exc), lineno=getattr(exc, "lineno", None)) from None
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", field=section)
            for key, raw in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]", field=key)
                values[key] = _convert(key, SCHEMA[section][key], raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, raw = item.split("=", 1)
        section, name = _resolve_key(key.strip())
        values[name] = _convert(name, SCHEMA[section][name], raw)
    try:
        return SimConfig(**values)
    except ProfileError as exc:
        raise ConfigError(f"profile: {exc}", field="profile") from None
    except ValueError as exc:
        message = str(exc)
        field = next((f.name for f in dataclasses.fields(SimConfig) if message.startswith(f.name) or f" {f.name}" in message), None)
        raise ConfigError(f"{field or 'config'}: {message}", field=field) from None


def _format(value):
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return "none"
    return str(value)


def config_echo(cfg: SimConfig):
    """The configuration as config-file lines (without comment prefixes)."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key in keys:
            lines.append(f"{key} = {_format(getattr(cfg, key))}")
    return lines
