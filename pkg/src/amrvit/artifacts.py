"""Saving and restoring trained models with their architecture manifest."""

from __future__ import annotations

from pathlib import Path

import torch
from torch import nn

from amrvit.baselines import CNN, CnnConfig, ResNet, ResNetConfig
from amrvit.diff_core import load_checkpoint, save_checkpoint
from amrvit.errors import ConfigError
from amrvit.model import ViT, ViTConfig


def model_kind(model: nn.Module) -> str:
    if isinstance(model, ViT):
        return "vit"
    return getattr(model, "kind")


def save_model(path: str | Path, model: nn.Module, extra: dict | None = None) -> None:
    meta = {"model_kind": model_kind(model), "config": model.cfg.to_dict(), **(extra or {})}
    save_checkpoint(path, model.state_dict(), meta)


def load_model(path: str | Path, expected_vit: ViTConfig | None = None) -> tuple[nn.Module, dict]:
    """Rebuild a model from a checkpoint; a ViT must match ``expected_vit`` when given."""
    tensors, meta = load_checkpoint(path)
    kind = meta.get("model_kind")
    if expected_vit is not None and kind != "vit":
        raise ConfigError(f"{path}: expected a ViT checkpoint, found {kind!r}")
    if kind == "vit":
        cfg = ViTConfig.from_dict(meta["config"])
        if expected_vit is not None and cfg.to_dict() != expected_vit.to_dict():
            raise ConfigError(f"{path}: checkpoint ViTConfig {cfg.to_dict()} does not match the run config "
                              f"{expected_vit.to_dict()}")
        model = ViT(cfg)
    elif kind == "cnn":
        model = CNN(CnnConfig.from_dict(meta["config"]))
    elif kind == "resnet":
        model = ResNet(ResNetConfig.from_dict(meta["config"]))
    else:
        raise ConfigError(f"{path}: unknown model kind {kind!r}")
    state = model.state_dict()
    missing = set(state) - set(tensors)
    if missing:
        raise ConfigError(f"{path}: checkpoint lacks tensors {sorted(missing)[:5]}")
    model.load_state_dict({k: torch.from_numpy(tensors[k]) for k in state})
    model.eval()
    return model, meta
