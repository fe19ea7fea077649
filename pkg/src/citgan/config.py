"""Flat ``key = value`` run configuration with one section per module."""

from __future__ import annotations

import configparser
import os
from dataclasses import fields
from pathlib import Path

from .data import ConfigError
from .trainer import TrainConfig

SEED_ENV = "CITGAN_SEED"

DEFAULTS: dict[str, dict[str, object]] = {
    "data": {"manifest": "", "domains": "", "resolution": 32, "channels": 1, "resize": "bilinear"},
    "train": {f.name: f.default for f in fields(TrainConfig) if f.name not in ("resolution", "channels")},
    "extractor": {"steps": 400, "batch_size": 32, "lr": 1e-3, "width": 16},
    "pad": {"gan_checkpoint": "", "steps": 600, "batch_size": 32, "lr": 1e-3, "width": 16, "seed": 0,
            "target": 0, "balanced": False},
}


def _coerce(raw: str, default, section: str, key: str, line: int | None):
    where = f"[{section}] {key}" + (f" (line {line})" if line else "")
    try:
        if isinstance(default, bool):
            v = raw.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"invalid value {raw!r} for {where}") from None
    return raw.strip()


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    lines, section = {}, None
    for no, ln in enumerate(text.splitlines(), start=1):
        s = ln.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif section and "=" in s and not s.startswith(("#", ";")):
            lines.setdefault((section, s.split("=", 1)[0].strip().lower()), no)
    return lines


def load_config(path=None, text: str | None = None) -> dict[str, dict[str, object]]:
    """Defaults overlaid with the file's values; unknown sections or keys are errors."""
    cfg = {sec: dict(vals) for sec, vals in DEFAULTS.items()}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        text = p.read_text(encoding="utf-8")
    if text:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as e:
            raise ConfigError(f"cannot parse config: {e}") from None
        lines = _key_lines(text)
        for sec in parser.sections():
            if sec not in DEFAULTS:
                raise ConfigError(f"unknown config section [{sec}]")
            for key, raw in parser.items(sec):
                line = lines.get((sec, key))
                if key not in DEFAULTS[sec]:
                    raise ConfigError(f"unknown config key {key!r} in [{sec}] at line {line}")
                cfg[sec][key] = _coerce(raw, DEFAULTS[sec][key], sec, key, line)
    if path is not None:
        base = Path(path).parent
        for sec, key in (("data", "manifest"), ("pad", "gan_checkpoint")):
            v = cfg[sec][key]
            if v and not os.path.isabs(v):
                cfg[sec][key] = str(base / v)
    env = os.environ.get(SEED_ENV)
    if env:
        seed = _coerce(env, 0, "env", SEED_ENV, None)
        cfg["train"]["seed"] = seed
        cfg["pad"]["seed"] = seed
    return cfg


def format_config(cfg: dict[str, dict[str, object]]) -> str:
    out = []
    for sec, vals in cfg.items():
        out.append(f"[{sec}]")
        out.extend(f"{k} = {v}" for k, v in vals.items())
        out.append("")
    return "\n".join(out)


def train_config(cfg) -> TrainConfig:
    t = dict(cfg["train"])
    t["resolution"] = cfg["data"]["resolution"]
    t["channels"] = cfg["data"]["channels"]
    try:
        return TrainConfig(**t)
    except ValueError as e:
        raise ConfigError(str(e)) from None
