"""Key = value configuration files.

Keys are flat; nested model settings use dotted names such as
``tcn.bottleneck = 64`` or ``cldnn.lstm_units = 128``. Values are parsed as
JSON when possible and kept as strings otherwise.
"""

from __future__ import annotations

import configparser
import json
from pathlib import Path

_SECTION = "config"


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        if raw.lower() in ("true", "false"):
            return raw.lower() == "true"
        return raw


def read_config(path) -> dict:
    text = Path(path).read_text()
    parser = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case
    parser.read_string(f"[{_SECTION}]\n" + text)
    return {k: _parse_value(v) for k, v in parser[_SECTION].items()}


def format_config(values: dict) -> str:
    return "".join(f"{k} = {json.dumps(v)}\n" for k, v in sorted(flatten(values).items()))


def flatten(values: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in values.items():
        if isinstance(v, dict):
            out.update(flatten(v, f"{prefix}{k}."))
        else:
            out[f"{prefix}{k}"] = list(v) if isinstance(v, tuple) else v
    return out


def unflatten(values: dict) -> dict:
    out: dict = {}
    for key, v in values.items():
        node = out
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = v
    return out


def merge(base: dict, override: dict) -> dict:
    """Recursive merge; ``None`` values in ``override`` are ignored."""
    out = dict(base)
    for k, v in override.items():
        if v is None:
            continue
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out
