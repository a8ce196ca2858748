"""Flat `key = value` config files, plus canonical JSON digests.

The format is deliberately tiny: one `key = value` per line, `#` starts a
comment, values are parsed as int, float, bool ("on"/"off"/"true"/"false"),
or comma-separated lists thereof.  Dotted prefixes namespace keys
(`world.users`, `train.epochs`, `model.d_attr`).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from typing import Any

from .errors import ConfigError

_BOOL = {"true": True, "on": True, "yes": True,
         "false": False, "off": False, "no": False}


def _coerce(raw: str) -> Any:
    raw = raw.strip()
    low = raw.lower()
    if low in _BOOL:
        return _BOOL[low]
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def parse_kv_text(text: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if "," in value:
            out[key] = [_coerce(v) for v in value.split(",") if v.strip()]
        else:
            out[key] = _coerce(value)
    return out


def read_kv(path) -> dict[str, Any]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_kv_text(fh.read())


def split_prefix(kv: dict[str, Any], prefix: str) -> dict[str, Any]:
    """Keys under `prefix.` with the prefix stripped."""
    marker = prefix + "."
    return {k[len(marker):]: v for k, v in kv.items() if k.startswith(marker)}


def build_dataclass(cls, kv: dict[str, Any]):
    """Instantiate a dataclass from a kv dict, rejecting unknown keys."""
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(kv) - names
    if unknown:
        raise ConfigError(
            f"unknown {cls.__name__} keys: {', '.join(sorted(unknown))}"
        )
    try:
        return cls(**kv)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def write_kv(path, kv: dict[str, Any]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key in kv:
            value = kv[key]
            if isinstance(value, (list, tuple)):
                value = ", ".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "on" if value else "off"
            fh.write(f"{key} = {value}\n")


def canonical_json(obj: Any) -> str:
    """Stable serialization used for digests and cache keys."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_default)


def _default(obj: Any):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return dataclasses.asdict(obj)
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if hasattr(obj, "value"):
        return obj.value
    raise TypeError(f"cannot canonicalize {type(obj).__name__}")


def canonical_digest(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()
