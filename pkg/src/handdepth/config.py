"""Run configuration file: one JSON document tying together dataset
location, model, training, augmentation and synthetic-corpus settings.

The file round-trips load -> save -> load identically; referenced paths
are checked on demand by the commands that need them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentParams
from .errors import DataError
from .model import ModelConfig
from .synthdata import SynthParams
from .train import TrainConfig


@dataclass
class RunConfig:
    dataset: str = "dataset"
    output_dir: str = "runs/out"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentParams = field(default_factory=AugmentParams)
    synth: SynthParams = field(default_factory=SynthParams)
    use_augmentation: bool = True

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "output_dir": self.output_dir,
            "use_augmentation": self.use_augmentation,
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "augment": self.augment.to_dict(),
            "synth": self.synth.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(
            dataset=d.get("dataset", "dataset"),
            output_dir=d.get("output_dir", "runs/out"),
            use_augmentation=bool(d.get("use_augmentation", True)),
            model=ModelConfig.from_dict(d["model"]) if "model" in d else ModelConfig(),
            train=TrainConfig.from_dict(d["train"]) if "train" in d else TrainConfig(),
            augment=AugmentParams.from_dict(d["augment"]) if "augment" in d else AugmentParams(),
            synth=SynthParams.from_dict(d["synth"]) if "synth" in d else SynthParams(),
        )

    def require_dataset(self) -> Path:
        path = Path(self.dataset)
        if not path.is_dir():
            raise DataError(f"dataset directory {path} does not exist")
        return path


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file {path} does not exist")
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise DataError(f"config file {path} is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(raw)


def save_run_config(cfg: RunConfig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
