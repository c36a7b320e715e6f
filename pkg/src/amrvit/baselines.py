"""Supervised CNN and ResNet reference classifiers."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import torch
from torch import nn

from amrvit import diff_core as dc
from amrvit.errors import ConfigError
from amrvit.model import Linear


def _conv_param(c_out: int, c_in: int, kh: int, kw: int) -> tuple[nn.Parameter, nn.Parameter]:
    bound = 1.0 / math.sqrt(c_in * kh * kw)
    return (nn.Parameter(torch.empty(c_out, c_in, kh, kw).uniform_(-bound, bound)),
            nn.Parameter(torch.zeros(c_out)))


class _ConfigMixin:
    def to_dict(self) -> dict:
        return {k: [list(x) if isinstance(x, tuple) else x for x in v] if isinstance(v, tuple) else v
                for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict):
        known = {f.name for f in fields(cls)}
        if set(d) - known:
            raise ConfigError(f"unknown {cls.__name__} keys: {sorted(set(d) - known)}")
        return cls(**d)


@dataclass
class CnnConfig(_ConfigMixin):
    input_len: int = 512
    channels: tuple[int, ...] = (50, 70, 70)
    kernels: tuple[tuple[int, int], ...] = ((1, 7), (1, 7), (2, 7))
    pool: tuple[int, int] = (1, 2)
    fc_dims: tuple[int, ...] = (512, 256, 80)
    dropout: float = 0.2
    num_classes: int = 16
    declared_fc1_in: int | None = 4060

    def __post_init__(self):
        self.channels = tuple(self.channels)
        self.kernels = tuple(tuple(k) for k in self.kernels)
        self.pool = tuple(self.pool)
        self.fc_dims = tuple(self.fc_dims)
        if len(self.channels) != len(self.kernels):
            raise ConfigError("one kernel size per conv stage is required")

    def flatten_dim(self) -> int:
        h, w = 2, self.input_len
        for (kh, kw) in self.kernels:
            h, w = h - kh + 1, w - kw + 1
            if h <= 0 or w <= 0:
                raise ConfigError(f"input length {self.input_len} is too short for the conv stack")
            h, w = h // self.pool[0], w // self.pool[1]
            if h <= 0 or w <= 0:
                raise ConfigError(f"input length {self.input_len} is too short for the pooling")
        return self.channels[-1] * h * w


class CNN(nn.Module):
    """Three conv->ReLU->max-pool stages and a dropout-regularised FC chain."""

    kind = "cnn"

    def __init__(self, cfg: CnnConfig | None = None):
        super().__init__()
        cfg = cfg or CnnConfig()
        self.cfg = cfg
        flat = cfg.flatten_dim()
        if cfg.declared_fc1_in is not None and cfg.declared_fc1_in != flat:
            raise ConfigError(
                f"CNN FC1 input declared as {cfg.declared_fc1_in} but the conv stack flattens to {flat}")
        self.conv_w = nn.ParameterList()
        self.conv_b = nn.ParameterList()
        c_in = 1
        for c_out, (kh, kw) in zip(cfg.channels, cfg.kernels):
            w, b = _conv_param(c_out, c_in, kh, kw)
            self.conv_w.append(w)
            self.conv_b.append(b)
            c_in = c_out
        dims = (flat, *cfg.fc_dims, cfg.num_classes)
        self.fcs = nn.ModuleList(Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.flat = flat

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 3:
            x = x.unsqueeze(1)  # [B, 1, 2, L]
        if x.shape[-1] != self.cfg.input_len:
            raise ConfigError(f"CNN expects length {self.cfg.input_len}, got {x.shape[-1]}")
        for w, b in zip(self.conv_w, self.conv_b):
            x = dc.max_pool2d(dc.relu(dc.conv2d(x, w, b)), self.cfg.pool)
        x = x.reshape(x.shape[0], -1)
        if x.shape[1] != self.flat:
            raise ConfigError(f"flatten size {x.shape[1]} != FC1 input {self.flat}")
        for k, fc in enumerate(self.fcs):
            x = fc(x)
            if k < len(self.fcs) - 1:
                x = dc.dropout(dc.relu(x), self.cfg.dropout, self.training)
        return x


@dataclass
class ResNetConfig(_ConfigMixin):
    input_len: int = 512
    channels: int = 32
    num_units: int = 5
    kernel: tuple[int, int] = (1, 3)
    pool_kernel: tuple[int, int] = (1, 2)
    pool_stride: tuple[int, int] = (1, 2)
    fc_dims: tuple[int, ...] = (128, 128)
    dropout: float = 0.3
    num_classes: int = 16
    declared_fc1_in: int | None = 256

    def __post_init__(self):
        self.kernel = tuple(self.kernel)
        self.pool_kernel = tuple(self.pool_kernel)
        self.pool_stride = tuple(self.pool_stride)
        self.fc_dims = tuple(self.fc_dims)

    def flatten_dim(self) -> int:
        w = self.input_len
        for _ in range(self.num_units + 1):  # stem + each residual unit is followed by a pool
            w = (w - self.pool_kernel[1]) // self.pool_stride[1] + 1
            if w <= 0:
                raise ConfigError(f"input length {self.input_len} is too short for {self.num_units + 1} pools")
        return self.channels * w


class ResNet(nn.Module):
    """Stem conv (I/Q as 2 input channels), residual units with identity skips, FC chain.

    Each unit is pre-activation: ``x + conv(relu(conv(relu(x))))``; every stage
    is followed by a max-pool that halves the time axis.
    """

    kind = "resnet"

    def __init__(self, cfg: ResNetConfig | None = None):
        super().__init__()
        cfg = cfg or ResNetConfig()
        self.cfg = cfg
        flat = cfg.flatten_dim()
        if cfg.declared_fc1_in is not None and cfg.declared_fc1_in != flat:
            raise ConfigError(
                f"ResNet FC1 input declared as {cfg.declared_fc1_in} but the conv stack flattens to {flat}")
        kh, kw = cfg.kernel
        c = cfg.channels
        self.stem_w, self.stem_b = _conv_param(c, 2, kh, kw)
        self.unit_w1 = nn.ParameterList()
        self.unit_b1 = nn.ParameterList()
        self.unit_w2 = nn.ParameterList()
        self.unit_b2 = nn.ParameterList()
        for _ in range(cfg.num_units):
            w1, b1 = _conv_param(c, c, kh, kw)
            w2, b2 = _conv_param(c, c, kh, kw)
            self.unit_w1.append(w1)
            self.unit_b1.append(b1)
            self.unit_w2.append(w2)
            self.unit_b2.append(b2)
        dims = (flat, *cfg.fc_dims, cfg.num_classes)
        self.fcs = nn.ModuleList(Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.pad = (kh // 2, kw // 2)

    def _pool(self, x):
        return dc.max_pool2d(x, self.cfg.pool_kernel, self.cfg.pool_stride)

    def branch(self, k: int, x: torch.Tensor) -> torch.Tensor:
        h = dc.conv2d(dc.relu(x), self.unit_w1[k], self.unit_b1[k], padding=self.pad)
        return dc.conv2d(dc.relu(h), self.unit_w2[k], self.unit_b2[k], padding=self.pad)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 4:
            x = x.squeeze(1)
        if x.shape[-1] != self.cfg.input_len:
            raise ConfigError(f"ResNet expects length {self.cfg.input_len}, got {x.shape[-1]}")
        x = x.unsqueeze(2)  # [B, 2, 1, L]
        x = self._pool(dc.relu(dc.conv2d(x, self.stem_w, self.stem_b, padding=self.pad)))
        for k in range(self.cfg.num_units):
            x = self._pool(x + self.branch(k, x))
        return x.reshape(x.shape[0], -1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.features(x)
        for k, fc in enumerate(self.fcs):
            x = fc(x)
            if k < len(self.fcs) - 1:
                x = dc.dropout(dc.relu(x), self.cfg.dropout, self.training)
        return x


def build_baseline(kind: str, cfg: dict | None = None) -> nn.Module:
    if kind == "cnn":
        return CNN(CnnConfig.from_dict(cfg or {}))
    if kind == "resnet":
        return ResNet(ResNetConfig.from_dict(cfg or {}))
    raise ConfigError(f"unknown baseline kind {kind!r}")


def train_supervised(model_kind: str, ds, cfg, model_cfg: dict | None = None):
    """Fit a CNN, ResNet or from-scratch ViT on the labeled training rows.

    Uses the fine-tuning loop with pseudo-labeling switched off, so optimiser,
    schedule and batching match the semi-supervised path.
    """
    from amrvit.model import ViT, ViTConfig
    from amrvit.training import PseudoConfig, finetune

    torch.manual_seed(cfg.seed)
    if model_kind == "vit":
        model = ViT(ViTConfig.from_dict(model_cfg or {}))
    else:
        model = build_baseline(model_kind, model_cfg)
    return finetune(ds, model, cfg, PseudoConfig(enabled=False), model_kind=model_kind)
