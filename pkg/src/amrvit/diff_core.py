"""Differentiable kernels, the Adam update, the step LR schedule and gradient checking.

Kernels are written against ``torch`` tensors and rely on torch autograd for
the reverse pass; everything here works in float32 for training and in
float64 for finite-difference checks.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
import torch
import torch.nn.functional as F

from amrvit.errors import ConfigError, InvalidArgumentError, MalformedLayoutError, NonFiniteGradientError

Tensor = torch.Tensor


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x``."""
    if x.shape[-1] != w.shape[0]:
        raise InvalidArgumentError(f"dense: input dim {x.shape[-1]} does not match weight {tuple(w.shape)}")
    if b is not None and b.shape != (w.shape[1],):
        raise InvalidArgumentError(f"dense: bias shape {tuple(b.shape)} does not match weight {tuple(w.shape)}")
    y = x @ w
    return y + b if b is not None else y


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    xc = x - x.mean(dim=-1, keepdim=True)
    # second centering pass removes the rounding residue of the first mean
    xc = xc - xc.mean(dim=-1, keepdim=True)
    var = (xc * xc).mean(dim=-1, keepdim=True)
    return xc * torch.rsqrt(var + eps) * gamma + beta


def softmax(x: Tensor, dim: int = -1) -> Tensor:
    z = x - x.amax(dim=dim, keepdim=True).detach()
    e = torch.exp(z)
    return e / e.sum(dim=dim, keepdim=True)


def log_softmax(x: Tensor, dim: int = -1) -> Tensor:
    z = x - x.amax(dim=dim, keepdim=True).detach()
    return z - torch.log(torch.exp(z).sum(dim=dim, keepdim=True))


def gelu(x: Tensor) -> Tensor:
    return 0.5 * x * (1.0 + torch.erf(x * (1.0 / math.sqrt(2.0))))


def relu(x: Tensor) -> Tensor:
    return torch.clamp_min(x, 0.0)


def dropout(x: Tensor, p: float, training: bool, generator: torch.Generator | None = None) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise InvalidArgumentError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device) >= p).to(x.dtype)
    return x * keep / (1.0 - p)


@dataclass
class AttentionParams:
    w_qkv: Tensor  # [d, 3d]
    b_qkv: Tensor  # [3d]
    w_out: Tensor  # [d, d]
    b_out: Tensor  # [d]


def multi_head_self_attention(x: Tensor, heads: int, params: AttentionParams, attn_dropout: float = 0.0,
                              training: bool = False, generator: torch.Generator | None = None) -> Tensor:
    """Scaled dot-product self-attention over ``x`` of shape ``[batch, n, d]``."""
    bsz, n, d = x.shape
    if d % heads:
        raise ConfigError(f"embedding dim {d} is not divisible by {heads} heads")
    hd = d // heads
    qkv = dense(x, params.w_qkv, params.b_qkv).reshape(bsz, n, 3, heads, hd).permute(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]  # [b, h, n, hd]
    scores = (q @ k.transpose(-1, -2)) * (1.0 / math.sqrt(hd))
    attn = dropout(softmax(scores, dim=-1), attn_dropout, training, generator)
    out = (attn @ v).transpose(1, 2).reshape(bsz, n, d)
    return dense(out, params.w_out, params.b_out)


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else (int(v[0]), int(v[1]))


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Cross-correlation; ``weight`` is ``[c_out, c_in, kh, kw]``."""
    stride, padding = _pair(stride), _pair(padding)
    if x.shape[1] != weight.shape[1]:
        raise ConfigError(f"conv2d: {x.shape[1]} input channels, kernel expects {weight.shape[1]}")
    for ax in (0, 1):
        out = conv_output_size(x.shape[2 + ax], weight.shape[2 + ax], stride[ax], padding[ax])
        if out <= 0:
            raise ConfigError(f"conv2d: non-positive output size {out} on axis {ax} for input {tuple(x.shape)}")
    return F.conv2d(x, weight, bias, stride=stride, padding=padding)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Transposed convolution; ``weight`` is ``[c_in, c_out, kh, kw]``."""
    stride, padding = _pair(stride), _pair(padding)
    if x.shape[1] != weight.shape[0]:
        raise ConfigError(f"conv_transpose2d: {x.shape[1]} input channels, kernel expects {weight.shape[0]}")
    for ax in (0, 1):
        out = (x.shape[2 + ax] - 1) * stride[ax] - 2 * padding[ax] + weight.shape[2 + ax]
        if out <= 0:
            raise ConfigError(f"conv_transpose2d: non-positive output size {out} on axis {ax}")
    return F.conv_transpose2d(x, weight, bias, stride=stride, padding=padding)


def max_pool2d(x: Tensor, kernel, stride=None) -> Tensor:
    kernel = _pair(kernel)
    stride = _pair(stride) if stride is not None else kernel
    for ax in (0, 1):
        if conv_output_size(x.shape[2 + ax], kernel[ax], stride[ax], 0) <= 0:
            raise ConfigError(f"max_pool2d: kernel {kernel} too large for input {tuple(x.shape)}")
    return F.max_pool2d(x, kernel, stride)


# ---------------------------------------------------------------- optimisation


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, Tensor] = field(default_factory=dict)
    v: dict[str, Tensor] = field(default_factory=dict)

    def copy(self) -> "OptimizerState":
        return OptimizerState(self.lr, self.beta1, self.beta2, self.eps, self.weight_decay, self.step,
                              {k: t.clone() for k, t in self.m.items()},
                              {k: t.clone() for k, t in self.v.items()})


@torch.no_grad()
def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, Tensor | None],
              state: OptimizerState) -> OptimizerState:
    """One bias-corrected Adam update, applied to ``params`` in place.

    Parameters whose gradient is ``None`` are left untouched.
    """
    for name, g in grads.items():
        if g is not None and not torch.isfinite(g).all():
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if p.shape != g.shape:
            raise InvalidArgumentError(f"gradient shape {tuple(g.shape)} != parameter {name!r} {tuple(p.shape)}")
        if state.weight_decay:
            g = g + state.weight_decay * p
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = torch.zeros_like(p)
            state.v[name] = torch.zeros_like(p)
        v = state.v[name]
        m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
        v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
        denom = (v / c2).sqrt_().add_(state.eps)
        p.addcdiv_(m, denom, value=-state.lr / c1)
    return state


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float = 1e-3
    step_size: int = 15
    gamma: float = 0.90

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise InvalidArgumentError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.step_size < 1:
            raise InvalidArgumentError(f"step_size must be >= 1, got {self.step_size}")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    if epoch < 0:
        raise InvalidArgumentError(f"epoch must be >= 0, got {epoch}")
    return schedule.base_lr * schedule.gamma ** (epoch // schedule.step_size)


# ---------------------------------------------------------------- gradient check


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    coords_checked: dict[str, int] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return all(math.isfinite(e) and e < self.tolerance for e in self.max_rel_error.values())

    def lines(self) -> list[str]:
        return [f"{name}: rel_err={err:.3e} over {self.coords_checked[name]} coords"
                for name, err in self.max_rel_error.items()]


def check_gradients(f: Callable[[], Tensor], inputs: Mapping[str, Tensor], tolerance: float = 1e-4,
                    h: float = 1e-5, max_coords: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare autograd gradients of the scalar ``f()`` with central differences.

    ``inputs`` are leaf tensors that ``f`` reads (typically float64). Each is
    perturbed in place by ``h * max(1, |x|)``. The error for one input is
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|)`` over the
    checked coordinates; ``max_coords`` caps how many coordinates are sampled.
    """
    names = list(inputs)
    leaves = [inputs[n] for n in names]
    for leaf in leaves:
        leaf.grad = None
    y = f()
    if y.numel() != 1:
        raise InvalidArgumentError("check_gradients needs a scalar-valued function")
    analytic = torch.autograd.grad(y, leaves, allow_unused=True)
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance)
    for name, leaf, g in zip(names, leaves, analytic):
        g = torch.zeros_like(leaf) if g is None else g.detach()
        flat = leaf.data.view(-1)
        gflat = g.reshape(-1)
        n = flat.numel()
        coords = np.arange(n) if max_coords is None or n <= max_coords else rng.choice(n, max_coords, replace=False)
        a_vals, n_vals = [], []
        with torch.no_grad():
            for k in coords:
                orig = flat[k].item()
                step = h * max(1.0, abs(orig))
                flat[k] = orig + step
                fp = f().item()
                flat[k] = orig - step
                fm = f().item()
                flat[k] = orig
                n_vals.append((fp - fm) / (2 * step))
                a_vals.append(gflat[k].item())
        a = np.asarray(a_vals)
        num = np.asarray(n_vals)
        scale = max(np.abs(a).max(initial=0.0), np.abs(num).max(initial=0.0), 1e-12)
        report.max_rel_error[name] = float(np.abs(a - num).max(initial=0.0) / scale)
        report.coords_checked[name] = len(coords)
    return report


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"AMRVCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, tensors: Mapping[str, Tensor | np.ndarray], meta: dict | None = None) -> None:
    """Write a JSON manifest ``{name, shape, offset}`` followed by a float32 blob.

    File layout: magic, uint32 manifest length, manifest, little-endian blob.
    ``offset`` counts float32 elements from the start of the blob.
    """
    entries, chunks, offset = [], [], 0
    for name, t in tensors.items():
        arr = t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
        shape = list(np.shape(arr))
        arr = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": shape, "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size
    manifest = json.dumps({"version": CHECKPOINT_VERSION, "meta": meta or {}, "tensors": entries}).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise MalformedLayoutError(f"{path}: not a checkpoint file")
    (mlen,) = struct.unpack("<I", raw[8:12])
    manifest = json.loads(raw[12:12 + mlen])
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise MalformedLayoutError(f"{path}: unsupported checkpoint version {manifest.get('version')}")
    blob = np.frombuffer(raw, dtype="<f4", offset=12 + mlen)
    out = {}
    for e in manifest["tensors"]:
        size = int(np.prod(e["shape"], dtype=np.int64))
        if e["offset"] + size > blob.size:
            raise MalformedLayoutError(f"{path}: tensor {e['name']!r} runs past the end of the blob")
        out[e["name"]] = blob[e["offset"]:e["offset"] + size].reshape(e["shape"]).astype(np.float32)
    return out, manifest["meta"]
