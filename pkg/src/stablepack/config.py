"""Flat `key = value` experiment config files."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .data import config_from_json, config_to_json
from .env import EnvConfig

RUN_KEYS = {"episodes": int, "seed": int, "parallel": int, "policy": str, "dataset": str}


def _parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "on", "yes"):
        return True
    if low in ("false", "off", "no"):
        return False
    if low in ("none", ""):
        return None
    if "," in text:
        return [_parse_value(v) for v in text.split(",")]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def load_config(path=None, base: EnvConfig | None = None) -> tuple[EnvConfig, dict]:
    """Read env settings and run settings (episodes, seed, ...) from a config file."""
    env = config_to_json(base or EnvConfig())
    run: dict = {}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key == "picks":
                from .data import read_picks

                env["picks"] = [[p.dx, p.dy] for p in read_picks(Path(path).parent / value)]
            elif key in RUN_KEYS:
                run[key] = RUN_KEYS[key](_parse_value(value))
            elif key in env:
                env[key] = _parse_value(value)
            else:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
    if isinstance(env["container"], (int, float)):
        env["container"] = [env["container"]] * 3
    env["container"] = [float(v) for v in env["container"]]
    if env.get("pad_size") is not None and not isinstance(env["pad_size"], list):
        env["pad_size"] = [env["pad_size"]] * 2
    return config_from_json(env), run


def config_hash(config: EnvConfig) -> str:
    blob = json.dumps(config_to_json(config), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
