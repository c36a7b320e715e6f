"""Run configuration schema (one JSON document per experiment)."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from amrvit.augmentation import AugmentKind, AugmentPolicy
from amrvit.errors import ConfigError
from amrvit.model import ViTConfig
from amrvit.signal_core.types import CLASS_NAMES
from amrvit.training import LossWeights, PseudoConfig, TrainConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataBlock(_Strict):
    source: Literal["synthetic", "rml"] = "synthetic"
    schemes: list[str] = Field(default_factory=lambda: list(CLASS_NAMES))
    snr_list_db: list[int] = Field(default_factory=lambda: list(range(-2, 21, 2)))
    frames_per_cell: int = Field(10, ge=0)
    frame_len: int = Field(512, gt=0)
    samples_per_symbol: int = Field(8, ge=1)
    seed: int = 0
    max_freq_offset: float = Field(0.002, ge=0)
    rml_path: Optional[str] = None
    class_map_path: Optional[str] = None
    snr_min_db: int = -2
    snr_max_db: int = 20
    per_cell: int = Field(1000, ge=0)
    decimate: bool = False
    dataset_path: Optional[str] = None
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)

    @field_validator("schemes")
    @classmethod
    def _known(cls, v):
        bad = [s for s in v if s not in CLASS_NAMES]
        if bad:
            raise ValueError(f"unknown modulation classes {bad}")
        return v


class AugmentationBlock(_Strict):
    noise_sigma: float = Field(0.05, ge=0)
    scale_sigma: float = Field(0.1, ge=0)
    mw_knots: int = Field(4, ge=2)
    mw_sigma: float = Field(0.2, ge=0)
    tw_knots: int = Field(4, ge=2)
    tw_sigma: float = Field(0.2, ge=0)
    enabled_kinds: list[str] = Field(default_factory=lambda: [k.value for k in AugmentKind])

    @field_validator("enabled_kinds")
    @classmethod
    def _kinds(cls, v):
        names = {k.value for k in AugmentKind}
        bad = [k for k in v if k not in names]
        if bad or not v:
            raise ValueError(f"enabled_kinds must be a non-empty subset of {sorted(names)}; bad: {bad}")
        return v

    def policy(self) -> AugmentPolicy:
        d = self.model_dump()
        d["enabled_kinds"] = tuple(AugmentKind(k) for k in d["enabled_kinds"])
        return AugmentPolicy(**d)


class ModelBlock(_Strict):
    input_shape: tuple[int, int] = (2, 512)
    patch: tuple[int, int] = (2, 16)
    embed_dim: int = 64
    layers: int = 8
    heads: int = 8
    mlp_dim: int = 64
    proj_dim: int = 64
    dropout: float = Field(0.2, ge=0, lt=1)
    num_classes: int = 16
    use_class_token: bool = False
    use_pos_embedding: bool = True
    decoder_input: Literal["tokens", "pooled"] = "tokens"
    decoder_hidden: int = 32
    decoder_strides: tuple[int, int] = (4, 4)

    def vit_config(self) -> ViTConfig:
        return ViTConfig.from_dict(self.model_dump())


class PseudoBlock(_Strict):
    threshold: float = Field(0.8, ge=0, lt=1)
    weight: float = Field(0.5, ge=0, le=1)
    warmup_epochs: int = Field(5, ge=0)
    enabled: bool = True
    refresh: Literal["batch", "epoch"] = "batch"


class TrainingBlock(_Strict):
    scenario: Literal["recon", "recon+contrastive", "contrastive"] = "recon"
    label_fraction: float = Field(0.1, gt=0, le=1)
    seeds: list[int] = Field(default_factory=lambda: [0])
    pretrain_epochs: int = Field(20, ge=0)
    finetune_epochs: int = Field(20, ge=0)
    batch_size: int = Field(128, ge=1)
    base_lr: float = Field(1e-3, gt=0)
    step_size: int = Field(15, ge=1)
    gamma: float = Field(0.9, gt=0, le=1)
    weight_decay: float = Field(0.0, ge=0)
    temperature: float = Field(0.5, gt=0)
    alpha: float = Field(1.0, ge=0)
    beta: float = Field(1.0, ge=0)
    w_recon: float = Field(1.0, ge=0)
    w_contrast: float = Field(1.0, ge=0)
    finetune_alpha: float = Field(0.0, ge=0)
    unlabeled_ratio: int = Field(1, ge=1)
    freeze_encoder: bool = False
    augment_finetune: bool = False
    pseudo: PseudoBlock = Field(default_factory=PseudoBlock)

    def train_config(self, seed: int, epochs: int, policy: AugmentPolicy) -> TrainConfig:
        return TrainConfig(
            epochs=epochs, batch_size=self.batch_size, seed=seed, label_fraction=self.label_fraction,
            scenario=self.scenario, base_lr=self.base_lr, step_size=self.step_size, gamma=self.gamma,
            weight_decay=self.weight_decay, temperature=self.temperature,
            weights=LossWeights(self.alpha, self.beta, self.w_recon, self.w_contrast),
            finetune_alpha=self.finetune_alpha, unlabeled_ratio=self.unlabeled_ratio,
            freeze_encoder=self.freeze_encoder, augment_finetune=self.augment_finetune, policy=policy)

    def pseudo_config(self) -> PseudoConfig:
        return PseudoConfig(**self.pseudo.model_dump())


class BaselineBlock(_Strict):
    kind: Literal["cnn", "resnet"] = "cnn"
    epochs: int = Field(20, ge=0)
    cnn: dict = Field(default_factory=dict)
    resnet: dict = Field(default_factory=dict)


class EvaluationBlock(_Strict):
    split: Literal["train", "val", "test"] = "test"
    snr_cap: Optional[int] = Field(700, ge=1)


class RunConfig(_Strict):
    data: DataBlock = Field(default_factory=DataBlock)
    augmentation: AugmentationBlock = Field(default_factory=AugmentationBlock)
    model: ModelBlock = Field(default_factory=ModelBlock)
    training: TrainingBlock = Field(default_factory=TrainingBlock)
    baseline: BaselineBlock = Field(default_factory=BaselineBlock)
    evaluation: EvaluationBlock = Field(default_factory=EvaluationBlock)
    output_dir: str = "runs/default"


def _format_errors(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def parse_config(doc: dict) -> RunConfig:
    try:
        cfg = RunConfig.model_validate(doc)
        cfg.model.vit_config()
    except ValidationError as err:
        raise ConfigError(f"invalid config: {_format_errors(err)}") from None
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{p}: not valid JSON ({err})") from None
    return parse_config(doc)
