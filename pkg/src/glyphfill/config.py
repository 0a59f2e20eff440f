"""Run configuration: one JSON document with model, train, sample and data sections."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from glyphfill.errors import ConfigError
from glyphfill.flow import TrainConfig
from glyphfill.mmdit import DenoiserConfig
from glyphfill.sampler import SampleConfig
from glyphfill.synth.dataset import DataConfig

SECTIONS = ("model", "train", "sample", "data")


def _data_from_dict(d: dict) -> DataConfig:
    unknown = set(d) - {f.name for f in fields(DataConfig)}
    if unknown:
        raise ConfigError(f"unknown data config keys: {sorted(unknown)}")
    cfg = DataConfig(**d)
    if cfg.n_amorphous < 0 or cfg.n_object < 0 or cfg.per_element < 1:
        raise ConfigError("element counts must be >= 0 and per_element >= 1")
    if not 0.0 <= cfg.val_fraction < 1.0:
        raise ConfigError("val_fraction must lie in [0, 1)")
    return cfg


@dataclass
class RunConfig:
    model: DenoiserConfig = field(default_factory=DenoiserConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        if (self.data.H, self.data.W, self.data.patch) != (self.model.H, self.model.W, self.model.patch):
            raise ConfigError("data H/W/patch must match the model config")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        try:
            model = DenoiserConfig.from_dict(d.get("model", {}))
            data_d = {"H": model.H, "W": model.W, "patch": model.patch, **d.get("data", {})}
            return cls(
                model=model,
                train=TrainConfig.from_dict(d.get("train", {})),
                sample=SampleConfig.from_dict(d.get("sample", {})),
                data=_data_from_dict(data_d),
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls()
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON ({exc})") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "sample": self.sample.to_dict(),
            "data": asdict(self.data),
        }

    def write_resolved(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
