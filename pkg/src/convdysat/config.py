"""Run configuration: flat JSON with dotted keys such as ``"model.temporal_heads"``."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .model import ModelConfig
from .sampling import WalkConfig
from .training import TrainConfig

DATA_DIR = Path(__file__).parent / "data"
TOY_CONFIG = DATA_DIR / "toy_config.json"


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    path: str = ""
    steps: int = 16
    mode: str = "cumulative"


@dataclass
class RunSettings:
    out: str = "convdysat-out"
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    threads: int = 1


_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "walk": WalkConfig,
    "data": DataConfig,
    "run": RunSettings,
}


def _coerce(name: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number")
        return float(value)
    if isinstance(default, (tuple, list)):
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{name} must be a list of integers")
        return type(default)(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{name} must be a string")
    return value


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    walk: WalkConfig = field(default_factory=WalkConfig)
    data: DataConfig = field(default_factory=DataConfig)
    run: RunSettings = field(default_factory=RunSettings)

    @classmethod
    def from_flat(cls, flat: dict[str, Any], base_dir: str | Path | None = None) -> RunConfig:
        """Build from dotted keys; ``data.path`` is resolved against ``base_dir``."""
        grouped: dict[str, dict[str, Any]] = {k: {} for k in _SECTIONS}
        for key, value in flat.items():
            section, _, name = key.partition(".")
            if section not in _SECTIONS or not name:
                raise ConfigError(f"unknown config key {key!r}")
            grouped[section][name] = value
        built = {}
        for section, kind in _SECTIONS.items():
            defaults = kind()
            known = {f.name for f in dataclasses.fields(kind)}
            values = {}
            for name, value in grouped[section].items():
                if name not in known:
                    raise ConfigError(f"unknown config key '{section}.{name}'")
                values[name] = _coerce(f"{section}.{name}", value, getattr(defaults, name))
            try:
                built[section] = kind(**values)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid {section} settings: {exc}") from None
        cfg = cls(**built)
        if not cfg.data.path:
            raise ConfigError("data.path is required")
        if base_dir is not None and not Path(cfg.data.path).is_absolute():
            cfg.data.path = str((Path(base_dir) / cfg.data.path).resolve())
        if cfg.data.steps < 2:
            raise ConfigError("data.steps must be at least 2")
        if cfg.data.mode not in ("binned", "cumulative"):
            raise ConfigError("data.mode must be 'binned' or 'cumulative'")
        if not cfg.run.seeds:
            raise ConfigError("run.seeds must not be empty")
        if cfg.run.threads < 1:
            raise ConfigError("run.threads must be at least 1")
        return cfg

    def to_flat(self) -> dict[str, Any]:
        flat = {}
        for section in _SECTIONS:
            for k, v in dataclasses.asdict(getattr(self, section)).items():
                flat[f"{section}.{k}"] = list(v) if isinstance(v, tuple) else v
        return flat

    def dumps(self) -> str:
        return json.dumps(self.to_flat(), indent=2, sort_keys=True) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


def load_config(path: str | Path) -> RunConfig:
    """Read a config file; the name ``toy`` selects the bundled toy configuration."""
    path = TOY_CONFIG if str(path) == "toy" else Path(path)
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return RunConfig.from_flat(raw, base_dir=Path(path).parent)
