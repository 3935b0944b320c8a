"""Run configuration loaded from a versioned JSON file.

Relative paths are resolved against the config file's directory. A single
top-level ``seed`` drives every random choice (initialization, dropout,
shuffling, subsampling).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .correlation import DEFAULT_THRESHOLDS

CONFIG_VERSION = 1


class RunConfigError(ValueError):
    pass


@dataclass
class DataSection:
    train: Optional[Path] = None
    test: Optional[Path] = None
    label_column: str = "label"
    normal_label: str = "normal"
    delimiter: str = ","
    drop_columns: list = field(default_factory=list)
    subsample: Optional[float] = None
    allow_missing_normal: bool = False


@dataclass
class CorrelationSection:
    edge: Optional[Path] = None
    fog: Optional[Path] = None
    cloud: Optional[Path] = None
    thresholds: list = field(default_factory=lambda: list(DEFAULT_THRESHOLDS))
    classes_in_scope: Optional[list] = None
    detected_totals: Optional[dict] = None


@dataclass
class RunConfig:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    output_dir: Path = Path("runs/default")
    correlation: CorrelationSection = field(default_factory=CorrelationSection)
    source: Optional[Path] = None

    @classmethod
    def from_dict(cls, d: dict, base: Path = Path(".")) -> "RunConfig":
        if not isinstance(d, dict):
            raise RunConfigError("config must be a JSON object")
        if d.get("version") != CONFIG_VERSION:
            raise RunConfigError(f"unsupported config version {d.get('version')!r} (expected {CONFIG_VERSION})")
        unknown = set(d) - {"version", "seed", "data", "model", "train", "output_dir", "correlation"}
        if unknown:
            raise RunConfigError(f"unknown config keys: {sorted(unknown)}")

        def path(v):
            if v is None:
                return None
            p = Path(v)
            return p if p.is_absolute() else base / p

        try:
            data = DataSection(**d.get("data", {}))
            corr = CorrelationSection(**d.get("correlation", {}))
        except TypeError as exc:
            raise RunConfigError(str(exc)) from None
        data.train, data.test = path(data.train), path(data.test)
        corr.edge, corr.fog, corr.cloud = path(corr.edge), path(corr.fog), path(corr.cloud)
        for key in ("feature_count", "num_classes", "seed"):
            if key in d.get("model", {}):
                raise RunConfigError(f"model.{key} is derived, do not set it")
        return cls(
            seed=int(d.get("seed", 0)),
            data=data,
            model=dict(d.get("model", {})),
            train=dict(d.get("train", {})),
            output_dir=path(d.get("output_dir", "runs/default")),
            correlation=corr,
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except OSError as exc:
            raise RunConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
        except json.JSONDecodeError as exc:
            raise RunConfigError(f"config {path} is not valid JSON: {exc}") from None
        cfg = cls.from_dict(raw, base=path.resolve().parent)
        cfg.source = path
        return cfg
