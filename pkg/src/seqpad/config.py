"""Pipeline configuration: one JSON document, strict keys, desk-scale defaults."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .ingest import DataError
from .minutiae import DetectorParams
from .model import PRESETS, ModelConfig, TrainConfig

_MODEL_OVERRIDES = {"input_size", "lstm_units", "lstm_dropout", "bidirectional", "dtype", "width_multiplier"}
_TRAIN_KEYS = {"lr", "batch_size", "max_epochs", "patience", "val_fraction"}


@dataclass
class Config:
    seed: int = 0
    patch_size: int = 48
    whole_frame: bool = False
    minutiae_source: str = "detect"  # or "external": <presentation>/minutiae.csv
    detector: dict = field(default_factory=dict)
    model: dict = field(default_factory=lambda: {"preset": "desk"})
    train: dict = field(default_factory=dict)
    fdr_target: float = 0.002
    folds: int = 5
    fold: Optional[int] = None  # run a single known-material fold
    live_test_fraction: float = 0.2
    report_untrained: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.minutiae_source not in ("detect", "external"):
            raise DataError(f"minutiae_source must be 'detect' or 'external', got {self.minutiae_source!r}")
        if self.patch_size <= 0 or self.patch_size % 2:
            raise DataError(f"patch_size must be a positive even number, got {self.patch_size}")
        self.detector_params()
        unknown = set(self.model) - _MODEL_OVERRIDES - {"preset"}
        if unknown:
            raise DataError(f"unknown model keys {sorted(unknown)}")
        if self.model.get("preset", "desk") not in PRESETS:
            raise DataError(f"unknown model preset {self.model.get('preset')!r}")
        unknown = set(self.train) - _TRAIN_KEYS
        if unknown:
            raise DataError(f"unknown train keys {sorted(unknown)}")
        self.train_config()
        if self.jobs < 1:
            raise DataError("jobs must be at least 1")

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "Config":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc.msg})") from None
        return cls.from_dict(data)

    def with_overrides(self, **kw) -> "Config":
        d = self.to_dict()
        d.update({k: v for k, v in kw.items() if v is not None})
        return Config.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    def detector_params(self) -> DetectorParams:
        return DetectorParams.from_dict(self.detector)

    def model_config(self, seq_len: int) -> ModelConfig:
        opts = dict(self.model)
        cfg = PRESETS[opts.pop("preset", "desk")](seq_len=seq_len)
        if "input_size" in opts:
            cfg.backbone.input_size = int(opts.pop("input_size"))
        if "width_multiplier" in opts:
            cfg.backbone.width_multiplier = float(opts.pop("width_multiplier"))
        for k, v in opts.items():
            setattr(cfg, k, v)
        cfg.__post_init__()
        return cfg

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, **self.train)
