"""Run configuration: a flat dataclass, a key=value config-file parser, and
flag-override merging. Seeds are mandatory; nothing defaults to wall clock."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, fields, replace
from typing import Dict, Optional, Tuple

from .errors import ConfigError

ABLATION_FLAGS = ("pfg", "ppd", "pnr", "iks")
NOISE_MODES = ("standard", "paper_literal")
BACKEND_MODES = ("mock", "http")
MONOTONE_DIRECTIONS = ("increasing", "decreasing", "free")


@dataclass(frozen=True)
class RunConfig:
    input_description: str
    seed: int
    tau_p: float = 0.3
    tau_match: float = 0.35
    kappa: float = 5.0
    min_gap: int = 2
    max_events: int = 6
    max_retries: int = 3
    top_k: int = 3
    max_fallback_rounds: int = 2
    sigma: float = 1.0
    tau_z_fraction: float = 0.7
    noise_mode: str = "standard"
    token_budget: int = 226
    target_frames: int = 161
    temporal_compression: int = 4
    latent_rate: float = 4.0
    resolution: Tuple[int, int] = (1360, 768)
    horizon: float = 6.0
    step: float = 0.5
    d_min: float = 0.5
    d_max: float = 10.0
    backends: str = "mock"
    backend_url: Optional[str] = None
    backend_token: Optional[str] = None
    cache_dir: Optional[str] = None
    rules_path: Optional[str] = None
    fixtures_path: Optional[str] = None
    monotone: Tuple[Tuple[str, str], ...] = ()
    pfg: bool = True
    ppd: bool = True
    pnr: bool = True
    iks: bool = True
    emit_package_only: bool = True

    @property
    def target_latent_frames(self) -> int:
        return (self.target_frames - 1) // self.temporal_compression + 1

    def monotone_decls(self) -> Dict[str, str]:
        return dict(self.monotone)

    def validate(self) -> "RunConfig":
        if not self.input_description.strip():
            raise ConfigError("input_description must be nonempty")
        if not isinstance(self.seed, int):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        positives = (
            "tau_p", "tau_match", "kappa", "max_events", "max_retries", "top_k",
            "token_budget", "target_frames", "temporal_compression", "latent_rate",
            "horizon", "step", "d_min", "d_max", "tau_z_fraction",
        )
        for name in positives:
            value = getattr(self, name)
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")
        if self.min_gap < 0 or self.max_fallback_rounds < 0:
            raise ConfigError("min_gap and max_fallback_rounds must be >= 0")
        if self.d_min > self.d_max:
            raise ConfigError(f"d_min {self.d_min} exceeds d_max {self.d_max}")
        if self.noise_mode not in NOISE_MODES:
            raise ConfigError(f"noise_mode must be one of {NOISE_MODES}, got {self.noise_mode!r}")
        if self.backends not in BACKEND_MODES:
            raise ConfigError(f"backends must be one of {BACKEND_MODES}, got {self.backends!r}")
        if self.backends == "http" and not self.backend_url:
            raise ConfigError("backends=http requires backend_url (or CCE_BACKEND_URL)")
        if len(self.resolution) != 2 or any(v <= 0 for v in self.resolution):
            raise ConfigError(f"resolution must be two positive ints, got {self.resolution}")
        for symbol, direction in self.monotone:
            if direction not in MONOTONE_DIRECTIONS:
                raise ConfigError(
                    f"monotone declaration {symbol}:{direction} not in {MONOTONE_DIRECTIONS}"
                )
        return self

    def to_json(self) -> dict:
        """Machine-independent view: input files appear as content digests and
        session-local knobs (cache dir, endpoint, token) are omitted, so the
        same semantic run hashes identically on any checkout path."""
        body = {}
        for f in fields(self):
            if f.name in _SESSION_FIELDS:
                continue
            value = getattr(self, f.name)
            if f.name in _INPUT_FILE_FIELDS:
                body[f.name.replace("_path", "_sha256")] = _file_digest(value)
                continue
            if isinstance(value, tuple):
                value = [list(v) if isinstance(v, tuple) else v for v in value]
            body[f.name] = value
        return body

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


_INPUT_FILE_FIELDS = ("rules_path", "fixtures_path")
_SESSION_FIELDS = ("cache_dir", "backend_url", "backend_token")


def _file_digest(path: Optional[str]) -> Optional[str]:
    if path is None:
        return None
    try:
        with open(path, "rb") as fh:
            return hashlib.sha256(fh.read()).hexdigest()
    except OSError as exc:
        raise ConfigError(f"cannot read input file {path}: {exc}") from exc


_FIELD_TYPES = {f.name: f for f in fields(RunConfig)}


def _parse_scalar(raw: str):
    text = raw.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    lowered = text.lower()
    if lowered in ("true", "on", "yes"):
        return True
    if lowered in ("false", "off", "no"):
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_config_text(text: str) -> Dict[str, object]:
    """Flat key = value lines; '#' comments; values are bare scalars or quoted
    strings. resolution takes WxH; monotone takes sym:dir[,sym:dir...]."""
    values: Dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = coerce_value(key, raw)
    return values


def coerce_value(key: str, raw) -> object:
    """Convert a raw flag/config string into the field's runtime type."""
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    if not isinstance(raw, str):
        return raw
    if key == "resolution":
        parts = raw.lower().replace("x", " ").split()
        if len(parts) != 2:
            raise ConfigError(f"resolution must look like 1360x768, got {raw!r}")
        try:
            return (int(parts[0]), int(parts[1]))
        except ValueError as exc:
            raise ConfigError(f"resolution must be integers, got {raw!r}") from exc
    if key == "monotone":
        if not raw.strip():
            return ()
        decls = []
        for piece in raw.split(","):
            if ":" not in piece:
                raise ConfigError(f"monotone entries need symbol:direction, got {piece!r}")
            symbol, _, direction = piece.strip().partition(":")
            decls.append((symbol.strip(), direction.strip()))
        return tuple(decls)
    value = _parse_scalar(raw)
    annotation = _FIELD_TYPES[key].type
    if "bool" in str(annotation):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key} expects true/false, got {raw!r}")
    if "int" in str(annotation) and not isinstance(value, bool):
        if isinstance(value, int):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise ConfigError(f"{key} expects an integer, got {raw!r}")
    if "float" in str(annotation):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"{key} expects a number, got {raw!r}")
    return value


def load_config_file(path: str) -> Dict[str, object]:
    """Parse a config file; relative rules/fixtures paths resolve beside it."""
    try:
        with open(path, encoding="utf-8") as fh:
            values = parse_config_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    base = os.path.dirname(os.path.abspath(path))
    for key in ("rules_path", "fixtures_path", "cache_dir"):
        value = values.get(key)
        if isinstance(value, str) and value and not os.path.isabs(value):
            values[key] = os.path.join(base, value)
    return values


def build_config(
    file_values: Optional[Dict[str, object]] = None,
    overrides: Optional[Dict[str, object]] = None,
) -> RunConfig:
    """Config-file values first, explicit flags win."""
    merged: Dict[str, object] = {}
    merged.update(file_values or {})
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    if "input_description" not in merged:
        raise ConfigError("input_description is required (flag --input or config key)")
    if "seed" not in merged:
        raise ConfigError("seed is required (flag --seed or config key)")
    unknown = set(merged) - set(_FIELD_TYPES)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**merged).validate()
