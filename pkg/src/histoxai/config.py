"""Pipeline configuration file (JSON). Unknown keys are rejected."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SynthSection(_Section):
    per_class: int = Field(200, ge=10)
    size: int = Field(64, ge=32)


class DatasetSection(_Section):
    root: Optional[str] = None
    synth: Optional[SynthSection] = None


class ModelSection(_Section):
    name: str = "TinyVGG"
    backbone: Optional[list[dict]] = None  # None -> TinyVGG 8/16/32
    input_size: int = Field(64, ge=1)
    frozen_layers: list[str] = []
    dropout: float = Field(0.5, ge=0.0, lt=1.0)


class TrainSection(_Section):
    learning_rate: float = Field(1e-4, ge=0.0)
    epochs: int = Field(10, ge=1)
    batch_size: int = Field(64, ge=1)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    epsilon: float = Field(1e-8, gt=0.0)
    shuffle: bool = True
    online_augment: bool = True


class StepSection(_Section):
    kind: Literal["rotate", "flip_h", "flip_v", "brightness", "translate", "random_crop"]
    params: dict = {}
    probability: float = Field(1.0, ge=0.0, le=1.0)


def _default_steps() -> list[StepSection]:
    return [
        StepSection(kind="rotate", params={"max_degrees": 25.0}, probability=1.0),
        StepSection(kind="flip_h", probability=0.5),
        StepSection(kind="flip_v", probability=0.5),
    ]


class AugmentSection(_Section):
    enabled: bool = True
    steps: list[StepSection] = Field(default_factory=_default_steps)


class ExplainSection(_Section):
    layer: str = "features"
    methods: list[Literal["gradcam", "smoothgrad", "vanilla_saliency"]] = ["gradcam", "smoothgrad"]
    n: int = Field(25, ge=1)
    sigma: float = Field(0.15, ge=0.0)
    alpha: float = Field(0.4, ge=0.0, le=1.0)
    class_index: Optional[int] = None  # None -> predicted class


class MetricsSection(_Section):
    threshold: float = 0.5
    averaging: Literal["positive", "macro"] = "positive"


class PipelineConfig(_Section):
    seed: int = 0
    task: Literal["lung", "lung_subtype", "colon"] = "colon"
    output_dir: str = "runs/default"
    dataset: DatasetSection = Field(default_factory=lambda: DatasetSection(synth=SynthSection()))
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)
    augment: AugmentSection = Field(default_factory=AugmentSection)
    explain: ExplainSection = Field(default_factory=ExplainSection)
    metrics: MetricsSection = Field(default_factory=MetricsSection)

    @field_validator("dataset")
    @classmethod
    def _has_source(cls, v: DatasetSection) -> DatasetSection:
        if v.root is None and v.synth is None:
            raise ValueError("dataset needs either 'root' or 'synth'")
        return v

    def dump(self) -> str:
        return self.model_dump_json(indent=2) + "\n"


def load_config(path=None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return PipelineConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid config {path}:\n{exc}") from exc
