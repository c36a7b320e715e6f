"""ViT encoder with mean pooling, projection head, linear classifier and conv decoder."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
from torch import nn

from amrvit import diff_core as dc
from amrvit.errors import ConfigError, InvalidArgumentError
from amrvit.signal_core.types import IQFrame


@dataclass
class ViTConfig:
    input_shape: tuple[int, int] = (2, 512)
    patch: tuple[int, int] = (2, 16)
    embed_dim: int = 64
    layers: int = 8
    heads: int = 8
    mlp_dim: int = 64
    proj_dim: int = 64
    dropout: float = 0.2
    num_classes: int = 16
    use_class_token: bool = False
    use_pos_embedding: bool = True
    decoder_input: str = "tokens"  # or "pooled"
    decoder_hidden: int = 32
    decoder_strides: tuple[int, int] = (4, 4)

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        self.patch = tuple(self.patch)
        self.decoder_strides = tuple(self.decoder_strides)
        h, w = self.input_shape
        ph, pw = self.patch
        if h % ph or w % pw:
            raise ConfigError(f"input {self.input_shape} is not divisible by patch {self.patch}")
        if self.embed_dim % self.heads:
            raise ConfigError(f"embed_dim {self.embed_dim} is not divisible by {self.heads} heads")
        if self.use_class_token:
            raise ConfigError("class tokens are not supported; representations are mean-pooled")
        if self.decoder_input not in ("tokens", "pooled"):
            raise ConfigError(f"decoder_input must be 'tokens' or 'pooled', got {self.decoder_input!r}")
        if ph != h:
            raise ConfigError("patches must span both I and Q rows for the decoder layout")
        if math.prod(self.decoder_strides) != pw:
            raise ConfigError(f"decoder strides {self.decoder_strides} must multiply to patch width {pw}")

    @property
    def num_patches(self) -> int:
        return (self.input_shape[0] // self.patch[0]) * (self.input_shape[1] // self.patch[1])

    @property
    def patch_dim(self) -> int:
        return self.patch[0] * self.patch[1]

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ViTConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown ViTConfig keys: {sorted(unknown)}")
        return cls(**d)


def _as_batch(x) -> torch.Tensor:
    if isinstance(x, IQFrame):
        x = x.to_array()
    t = torch.as_tensor(np.asarray(x) if not isinstance(x, torch.Tensor) else x)
    return t.unsqueeze(0) if t.dim() == 2 else t


def patchify(x, patch: tuple[int, int] = (2, 16)) -> torch.Tensor:
    """Split ``(B, 2, L)`` frames into time-ordered flattened patches.

    Each patch holds its rows one after another (I samples then Q samples).
    A single ``(2, L)`` frame or :class:`IQFrame` yields ``(num_patches, patch_dim)``.
    """
    single = isinstance(x, IQFrame) or (hasattr(x, "ndim") and x.ndim == 2)
    t = _as_batch(x)
    b, h, w = t.shape
    ph, pw = patch
    if h % ph or w % pw:
        raise InvalidArgumentError(f"frame shape {(h, w)} is not divisible by patch {patch}")
    p = t.reshape(b, h // ph, ph, w // pw, pw).permute(0, 1, 3, 2, 4).reshape(b, -1, ph * pw)
    return p[0] if single else p


def unpatchify(p: torch.Tensor, input_shape: tuple[int, int] = (2, 512),
               patch: tuple[int, int] = (2, 16)) -> torch.Tensor:
    single = p.dim() == 2
    if single:
        p = p.unsqueeze(0)
    h, w = input_shape
    ph, pw = patch
    t = p.reshape(p.shape[0], h // ph, w // pw, ph, pw).permute(0, 1, 3, 2, 4).reshape(p.shape[0], h, w)
    return t[0] if single else t


class Linear(nn.Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True):
        super().__init__()
        bound = 1.0 / math.sqrt(d_in)
        self.weight = nn.Parameter(torch.empty(d_in, d_out).uniform_(-bound, bound))
        self.bias = nn.Parameter(torch.zeros(d_out)) if bias else None

    def forward(self, x):
        return dc.dense(x, self.weight, self.bias)


class LayerNorm(nn.Module):
    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(d))
        self.bias = nn.Parameter(torch.zeros(d))
        self.eps = eps

    def forward(self, x):
        return dc.layer_norm(x, self.weight, self.bias, self.eps)


class SelfAttention(nn.Module):
    def __init__(self, d: int, heads: int, dropout: float):
        super().__init__()
        if d % heads:
            raise ConfigError(f"embedding dim {d} is not divisible by {heads} heads")
        self.heads = heads
        self.dropout = dropout
        bound = 1.0 / math.sqrt(d)
        self.w_qkv = nn.Parameter(torch.empty(d, 3 * d).uniform_(-bound, bound))
        self.b_qkv = nn.Parameter(torch.zeros(3 * d))
        self.w_out = nn.Parameter(torch.empty(d, d).uniform_(-bound, bound))
        self.b_out = nn.Parameter(torch.zeros(d))

    def forward(self, x):
        params = dc.AttentionParams(self.w_qkv, self.b_qkv, self.w_out, self.b_out)
        return dc.multi_head_self_attention(x, self.heads, params, self.dropout, self.training)


class Block(nn.Module):
    """Pre-norm transformer block: MHSA and GELU MLP, each with a residual."""

    def __init__(self, d: int, heads: int, mlp_dim: int, dropout: float):
        super().__init__()
        self.norm1 = LayerNorm(d)
        self.attn = SelfAttention(d, heads, dropout)
        self.norm2 = LayerNorm(d)
        self.fc1 = Linear(d, mlp_dim)
        self.fc2 = Linear(mlp_dim, d)
        self.p = dropout

    def forward(self, x):
        x = x + dc.dropout(self.attn(self.norm1(x)), self.p, self.training)
        h = dc.dropout(dc.gelu(self.fc1(self.norm2(x))), self.p, self.training)
        return x + dc.dropout(self.fc2(h), self.p, self.training)


class ConvDecoder(nn.Module):
    """Maps ``[B, n, d]`` tokens back to ``(B, 2, L)`` with two strided transposed convs."""

    def __init__(self, cfg: ViTConfig):
        super().__init__()
        d, hid = cfg.embed_dim, cfg.decoder_hidden
        s1, s2 = cfg.decoder_strides
        out_ch = cfg.input_shape[0]
        self.cfg = cfg
        b1 = 1.0 / math.sqrt(d * s1)
        b2 = 1.0 / math.sqrt(hid * s2)
        self.w1 = nn.Parameter(torch.empty(d, hid, 1, s1).uniform_(-b1, b1))
        self.b1 = nn.Parameter(torch.zeros(hid))
        self.w2 = nn.Parameter(torch.empty(hid, out_ch, 1, s2).uniform_(-b2, b2))
        self.b2 = nn.Parameter(torch.zeros(out_ch))
        if cfg.decoder_input == "pooled":
            self.expand = Linear(d, d * cfg.num_patches)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        if self.cfg.decoder_input == "pooled":
            pooled = tokens.mean(dim=1) if tokens.dim() == 3 else tokens
            tokens = self.expand(pooled).reshape(pooled.shape[0], self.cfg.num_patches, self.cfg.embed_dim)
        fmap = tokens.transpose(1, 2).unsqueeze(2)  # [B, d, 1, n]
        s1, s2 = self.cfg.decoder_strides
        h = dc.gelu(dc.conv_transpose2d(fmap, self.w1, self.b1, stride=(1, s1)))
        out = dc.conv_transpose2d(h, self.w2, self.b2, stride=(1, s2))  # [B, 2, 1, L]
        return out.squeeze(2)


class ViT(nn.Module):
    """Encoder, pooled classifier, projection head and decoder in one module."""

    def __init__(self, cfg: ViTConfig | None = None):
        super().__init__()
        cfg = cfg or ViTConfig()
        self.cfg = cfg
        d = cfg.embed_dim
        self.patch_embed = Linear(cfg.patch_dim, d)
        self.pos_embed = nn.Parameter(torch.randn(cfg.num_patches, d) * 0.02)
        self.blocks = nn.ModuleList(Block(d, cfg.heads, cfg.mlp_dim, cfg.dropout) for _ in range(cfg.layers))
        self.norm = LayerNorm(d)
        self.proj1 = Linear(d, cfg.proj_dim)
        self.proj2 = Linear(cfg.proj_dim, cfg.proj_dim)
        self.classifier = Linear(d, cfg.num_classes)
        self.decoder = ConvDecoder(cfg)

    def patchify(self, iq: torch.Tensor) -> torch.Tensor:
        return patchify(iq, self.cfg.patch)

    def encode(self, patches: torch.Tensor) -> torch.Tensor:
        x = self.patch_embed(patches)
        if self.cfg.use_pos_embedding:
            x = x + self.pos_embed
        x = dc.dropout(x, self.cfg.dropout, self.training)
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)

    @staticmethod
    def pool_mean(tokens: torch.Tensor) -> torch.Tensor:
        return tokens.mean(dim=-2)

    def project(self, pooled: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
        """Two-layer GELU MLP followed by L2 normalisation (norm floored at ``eps``)."""
        z = self.proj2(dc.gelu(self.proj1(pooled)))
        norm = torch.sqrt((z * z).sum(dim=-1, keepdim=True))
        return z / torch.clamp_min(norm, eps)

    def classify(self, pooled: torch.Tensor) -> torch.Tensor:
        return self.classifier(pooled)

    def decode(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.decoder(tokens)

    def embed(self, iq: torch.Tensor) -> torch.Tensor:
        return self.pool_mean(self.encode(self.patchify(iq)))

    def forward(self, iq: torch.Tensor) -> torch.Tensor:
        return self.classify(self.embed(iq))

    def encoder_parameters(self):
        skip = ("proj1.", "proj2.", "classifier.", "decoder.")
        return [p for n, p in self.named_parameters() if not n.startswith(skip)]

    def head_parameter_names(self) -> list[str]:
        return [n for n, _ in self.named_parameters() if n.startswith("classifier.")]


def count_parameters(module: nn.Module, prefix_filter=None) -> int:
    return sum(p.numel() for n, p in module.named_parameters() if prefix_filter is None or prefix_filter(n))
