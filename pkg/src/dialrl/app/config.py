"""Run configuration: one JSON document, environment overrides, CLI overrides."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..core import Schema, ValidationError
from ..db import Database, load_database
from ..neural.model import ModelConfig
from ..simulator import RewardConfig
from ..train import PpoConfig, WarmupConfig

ENV_PREFIX = "DIALRL"

_SECTIONS = {
    "model": ModelConfig,
    "warmup": WarmupConfig,
    "ppo": PpoConfig,
    "reward": RewardConfig,
}


@dataclass
class RunConfig:
    schema_path: str
    database_path: str
    model: ModelConfig = field(default_factory=ModelConfig)
    warmup: WarmupConfig = field(default_factory=WarmupConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)

    def load_schema(self) -> Schema:
        if not Path(self.schema_path).exists():
            raise ValidationError(f"schema file not found: {self.schema_path}")
        return Schema.load(self.schema_path)

    def load_database(self, schema: Schema) -> Database:
        if not Path(self.database_path).exists():
            raise ValidationError(f"database file not found: {self.database_path}")
        return load_database(self.database_path, schema)

    def to_jsonable(self) -> dict:
        return {
            "schema_path": self.schema_path,
            "database_path": self.database_path,
            "model": self.model.to_jsonable(),
            "warmup": self.warmup.to_jsonable(),
            "ppo": self.ppo.to_jsonable(),
            "reward": self.reward.to_jsonable(),
        }


def _coerce(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def _env_overrides(environ) -> dict:
    """Collect DIALRL_<SECTION>_<FIELD> and DIALRL_<TOPLEVEL> overrides."""
    out: dict = {}
    for key, value in environ.items():
        if not key.startswith(ENV_PREFIX + "_"):
            continue
        tail = key[len(ENV_PREFIX) + 1 :].lower()
        section, _, fieldname = tail.partition("_")
        if section in _SECTIONS and fieldname:
            out.setdefault(section, {})[fieldname] = _coerce(value)
        else:
            out[tail] = _coerce(value)
    return out


def _merge(base: dict, extra: dict) -> dict:
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(
    path: str | Path,
    overrides: Optional[dict] = None,
    environ=None,
) -> RunConfig:
    """Read the config document, then apply env and explicit overrides."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {path}: invalid JSON ({exc})") from exc
    raw = _merge(raw, _env_overrides(environ if environ is not None else os.environ))
    if overrides:
        raw = _merge(raw, overrides)
    return build_config(raw, base_dir=path.parent)


def build_config(raw: dict, base_dir: Optional[Path] = None) -> RunConfig:
    known = {"schema_path", "database_path", *_SECTIONS}
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    for required in ("schema_path", "database_path"):
        if required not in raw:
            raise ValidationError(f"config is missing {required!r}")

    def _resolve(p: str) -> str:
        path = Path(p)
        if not path.is_absolute() and base_dir is not None:
            candidate = base_dir / path
            if candidate.exists():
                return str(candidate)
        return str(path)

    sections = {}
    for name, cls in _SECTIONS.items():
        payload = dict(raw.get(name, {}))
        if name == "reward" and "lambda" in payload:
            payload["shaping_lambda"] = payload.pop("lambda")
        try:
            sections[name] = cls(**payload)
        except TypeError as exc:
            raise ValidationError(f"config section {name!r}: {exc}") from exc
    return RunConfig(
        schema_path=_resolve(str(raw["schema_path"])),
        database_path=_resolve(str(raw["database_path"])),
        **sections,
    )


def write_snapshot(config: RunConfig, run_dir: str | Path) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / "config_resolved.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_jsonable(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
