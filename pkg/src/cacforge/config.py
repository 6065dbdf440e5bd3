"""Declarative pipeline configuration.

Defaults reproduce the reference acquisition and evaluation setup exactly
(SDD 1085.6 mm, 512-pixel detector at 1 mm, slice gate 30, 5 folds x 5
seeds), so a bare run needs no config file.  YAML files use the same nested
section names as the dataclass fields; CLI flags override file values.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from .enhance import EnhanceConfig, UpsampleConfig
from .projector import ProjectionGeometry


@dataclass(frozen=True)
class IngestSettings:
    gate_min_slices: int = 30
    target_spacing: float | None = None  # None: match in-plane spacing


@dataclass(frozen=True)
class UpsampleSettings:
    enabled: bool = False
    factor: int = 4
    method: str = "bicubic_baseline"
    command: tuple[str, ...] = ()
    timeout: float = 60.0

    def to_config(self) -> UpsampleConfig:
        return UpsampleConfig(self.factor, self.method, tuple(self.command), self.timeout)


@dataclass(frozen=True)
class DatasetSettings:
    folds: int = 5
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)


@dataclass(frozen=True)
class EnhanceSettings:
    clahe_tiles: tuple[int, int] = (8, 8)
    clahe_clip: float = 2.0
    unsharp_size: int = 5
    unsharp_sigma: float = 1.0
    unsharp_gain: float = 1.5
    gamma: float = 1.5
    clahe_includes_unsharp: bool = True

    def to_config(self, mode: str) -> EnhanceConfig:
        return EnhanceConfig(
            mode=mode,
            clahe_tiles=tuple(self.clahe_tiles),
            clahe_clip=self.clahe_clip,
            unsharp_size=self.unsharp_size,
            unsharp_sigma=self.unsharp_sigma,
            unsharp_gain=self.unsharp_gain,
            gamma=self.gamma,
            clahe_includes_unsharp=self.clahe_includes_unsharp,
        )


@dataclass(frozen=True)
class PipelineConfig:
    geometry: ProjectionGeometry = field(default_factory=ProjectionGeometry)
    ingest: IngestSettings = field(default_factory=IngestSettings)
    enhance: EnhanceSettings = field(default_factory=EnhanceSettings)
    upsample: UpsampleSettings = field(default_factory=UpsampleSettings)
    dataset: DatasetSettings = field(default_factory=DatasetSettings)
    workers: int = 1
    png_preview: bool = False

    def hash(self) -> str:
        # workers is wall-clock-only: it must never invalidate caches or
        # mark artifacts as produced by a "different" configuration
        canon = asdict(self)
        canon.pop("workers")
        return hashlib.sha256(json.dumps(canon, sort_keys=True, default=list).encode()).hexdigest()[:12]


class ConfigError(ValueError):
    pass


_SECTIONS = {
    "geometry": ProjectionGeometry,
    "ingest": IngestSettings,
    "enhance": EnhanceSettings,
    "upsample": UpsampleSettings,
    "dataset": DatasetSettings,
}


def load_config(path: Path | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Build a config from an optional YAML file plus flat overrides.

    Override keys are either top-level ('workers') or dotted
    ('geometry.output_size'); values of None are ignored.
    """
    data: dict = {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text("utf-8"))
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: config root must be a mapping")
        data = loaded

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if "." in key:
            section, name = key.split(".", 1)
            data.setdefault(section, {})[name] = value
        else:
            data[key] = value

    kwargs: dict = {}
    for section, cls in _SECTIONS.items():
        section_data = data.pop(section, {})
        if not isinstance(section_data, dict):
            raise ConfigError(f"config section {section!r} must be a mapping")
        try:
            known = {f for f in cls.__dataclass_fields__}  # type: ignore[attr-defined]
            unknown = set(section_data) - known
            if unknown:
                raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
            coerced = {
                k: tuple(v) if isinstance(v, list) else v for k, v in section_data.items()
            }
            kwargs[section] = cls(**coerced)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad config section {section!r}: {exc}") from exc

    for key in ("workers", "png_preview"):
        if key in data:
            kwargs[key] = data.pop(key)
    if data:
        raise ConfigError(f"unknown config keys: {sorted(data)}")
    try:
        return PipelineConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def with_overrides(cfg: PipelineConfig, **kwargs) -> PipelineConfig:
    return replace(cfg, **kwargs)
