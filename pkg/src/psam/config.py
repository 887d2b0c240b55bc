"""Run configuration: one JSON document covering conversion, model and training."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .imager import ConvertConfig
from .promptmodule import ModelConfig, TrainConfig
from .promptvit import EncoderConfig

FORMAT_VERSION = 1
TASKS = ("detect", "family", "drift")


def _pick(cls, d: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


@dataclass(frozen=True)
class RunConfig:
    task: str = "detect"
    convert: ConvertConfig = field(default_factory=ConvertConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    se_reduction: int = 4
    head_blocks: int = 2
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if not 0 <= self.test_fraction < 1:
            raise ValueError("test_fraction must lie in [0, 1)")

    def model_config(self, num_classes: int) -> ModelConfig:
        return ModelConfig(
            encoder=self.encoder,
            num_classes=num_classes,
            se_reduction=self.se_reduction,
            head_blocks=self.head_blocks,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["format_version"] = FORMAT_VERSION
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        version = d.pop("format_version", FORMAT_VERSION)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported config format_version {version}")
        d.pop("paths", None)
        for key, sub in (("convert", ConvertConfig), ("encoder", EncoderConfig), ("train", TrainConfig)):
            if key in d:
                d[key] = _pick(sub, d[key])
        return _pick(cls, d)

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls()
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_overrides(self, width: int | None = None, seed: int | None = None, f64: bool = False) -> "RunConfig":
        cfg = self
        if width is not None:
            cfg = replace(cfg, convert=replace(cfg.convert, width=width))
        if seed is not None:
            cfg = replace(cfg, train=replace(cfg.train, seed=seed))
        if f64:
            cfg = replace(cfg, train=replace(cfg.train, float_bits=64))
        return cfg
