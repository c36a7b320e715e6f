"""Finite-difference gradient checks and augmentation invariants, runnable in under a minute."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from amrvit import augmentation as aug
from amrvit import diff_core as dc
from amrvit.baselines import CNN, CnnConfig, ResNet, ResNetConfig
from amrvit.model import ViT, ViTConfig
from amrvit.signal_core.types import IQFrame
from amrvit.training import (Batch, LossWeights, PseudoConfig, Scenario, classification_loss, contrastive_loss,
                             reconstruction_loss, semi_supervised_loss)

KERNEL_TOL = 1e-4
MODEL_TOL = 1e-3


@dataclass
class CheckLine:
    name: str
    passed: bool
    detail: str

    def __str__(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _leaf(g: torch.Generator, *shape) -> torch.Tensor:
    return torch.randn(*shape, generator=g, dtype=torch.float64).requires_grad_(True)


def _grad_line(name: str, f, inputs, tol: float, max_coords=None) -> CheckLine:
    rep = dc.check_gradients(f, inputs, tolerance=tol, max_coords=max_coords)
    worst = max(rep.max_rel_error, key=rep.max_rel_error.get)
    total = sum(rep.coords_checked.values())
    return CheckLine(name, rep.passed,
                     f"max rel error {rep.worst:.2e} (at {worst}) over {total} coords, tol {tol:g}")


def kernel_checks(seed: int = 0) -> list[CheckLine]:
    g = torch.Generator().manual_seed(seed)
    out = []

    x, w, b = _leaf(g, 3, 5), _leaf(g, 5, 4), _leaf(g, 4)
    r = torch.randn(3, 4, generator=g, dtype=torch.float64)
    out.append(_grad_line("dense", lambda: (dc.dense(x, w, b) * r).sum(), {"x": x, "w": w, "b": b}, KERNEL_TOL))

    x, ga, be = _leaf(g, 4, 6), _leaf(g, 6), _leaf(g, 6)
    r = torch.randn(4, 6, generator=g, dtype=torch.float64)
    out.append(_grad_line("layer_norm", lambda: (dc.layer_norm(x, ga, be) * r).sum(),
                          {"x": x, "gamma": ga, "beta": be}, KERNEL_TOL))

    x = _leaf(g, 3, 7)
    r = torch.randn(3, 7, generator=g, dtype=torch.float64)
    out.append(_grad_line("softmax", lambda: (dc.softmax(x) * r).sum(), {"x": x}, KERNEL_TOL))
    out.append(_grad_line("log_softmax", lambda: (dc.log_softmax(x) * r).sum(), {"x": x}, KERNEL_TOL))
    out.append(_grad_line("gelu", lambda: (dc.gelu(x) * r).sum(), {"x": x}, KERNEL_TOL))
    # keep inputs away from the kink at zero
    xr = (torch.rand(3, 7, generator=g, dtype=torch.float64) + 0.1) * torch.sign(torch.randn(3, 7, generator=g))
    xr = xr.double().requires_grad_(True)
    out.append(_grad_line("relu", lambda: (dc.relu(xr) * r).sum(), {"x": xr}, KERNEL_TOL))

    def drop():
        return (dc.dropout(x, 0.3, True, torch.Generator().manual_seed(7)) * r).sum()
    out.append(_grad_line("dropout (fixed mask)", drop, {"x": x}, KERNEL_TOL))

    d, heads = 8, 2
    xa = _leaf(g, 2, 4, d)
    p = dc.AttentionParams(_leaf(g, d, 3 * d), _leaf(g, 3 * d), _leaf(g, d, d), _leaf(g, d))
    r = torch.randn(2, 4, d, generator=g, dtype=torch.float64)
    out.append(_grad_line("multi_head_self_attention",
                          lambda: (dc.multi_head_self_attention(xa, heads, p) * r).sum(),
                          {"x": xa, "w_qkv": p.w_qkv, "b_qkv": p.b_qkv, "w_out": p.w_out, "b_out": p.b_out},
                          KERNEL_TOL))

    xc, wc, bc = _leaf(g, 2, 3, 2, 9), _leaf(g, 4, 3, 2, 3), _leaf(g, 4)
    r = torch.randn(2, 4, 1, 9, generator=g, dtype=torch.float64)
    out.append(_grad_line("conv2d", lambda: (dc.conv2d(xc, wc, bc, padding=(0, 1)) * r).sum(),
                          {"x": xc, "w": wc, "b": bc}, KERNEL_TOL))

    xt, wt, bt = _leaf(g, 2, 3, 1, 5), _leaf(g, 3, 2, 1, 4), _leaf(g, 2)
    r = torch.randn(2, 2, 1, 20, generator=g, dtype=torch.float64)
    out.append(_grad_line("conv_transpose2d", lambda: (dc.conv_transpose2d(xt, wt, bt, stride=(1, 4)) * r).sum(),
                          {"x": xt, "w": wt, "b": bt}, KERNEL_TOL))

    xp = _leaf(g, 2, 3, 2, 8)
    r = torch.randn(2, 3, 1, 4, generator=g, dtype=torch.float64)
    out.append(_grad_line("max_pool2d", lambda: (dc.max_pool2d(xp, 2) * r).sum(), {"x": xp}, KERNEL_TOL))

    logits = _leaf(g, 5, 4)
    labels = torch.tensor([0, 3, 1, 1, 2])
    out.append(_grad_line("cross_entropy", lambda: classification_loss(logits, labels), {"logits": logits},
                          KERNEL_TOL))
    z1, z2 = _leaf(g, 4, 6), _leaf(g, 4, 6)
    out.append(_grad_line("nt_xent", lambda: contrastive_loss(z1, z2, 0.5), {"z1": z1, "z2": z2}, KERNEL_TOL))
    pr, tg = _leaf(g, 3, 2, 8), torch.randn(3, 2, 8, generator=g, dtype=torch.float64)
    out.append(_grad_line("mse", lambda: reconstruction_loss(pr, tg), {"pred": pr}, KERNEL_TOL))
    return out


def model_checks(seed: int = 0, max_coords: int = 6) -> list[CheckLine]:
    """Total semi-supervised loss through the full ViT, plus both baselines, in float64."""
    torch.manual_seed(seed)
    g = torch.Generator().manual_seed(seed)
    model = ViT(ViTConfig()).double().eval()
    x = torch.randn(4, 2, 512, generator=g, dtype=torch.float64)
    v2 = torch.randn(4, 2, 512, generator=g, dtype=torch.float64)
    batch = Batch(inputs=x, targets=x.clone(), labels=torch.tensor([1, 5, 0, 0]),
                  labeled=torch.tensor([True, True, False, False]), view2=v2)
    pseudo = PseudoConfig(threshold=0.0, weight=0.5)

    def vit_loss():
        return semi_supervised_loss(batch, model, LossWeights(1.0, 1.0, 1.0, 1.0), pseudo,
                                    Scenario.RECON_CONTRASTIVE).total

    out = [_grad_line("vit total loss", vit_loss, dict(model.named_parameters()), MODEL_TOL, max_coords)]

    xb = torch.randn(3, 2, 512, generator=g, dtype=torch.float64)
    yb = torch.tensor([2, 0, 7])
    cnn = CNN(CnnConfig()).double().eval()
    out.append(_grad_line("cnn cross-entropy", lambda: classification_loss(cnn(xb), yb),
                          dict(cnn.named_parameters()), MODEL_TOL, max_coords))
    res = ResNet(ResNetConfig()).double().eval()
    out.append(_grad_line("resnet cross-entropy", lambda: classification_loss(res(xb), yb),
                          dict(res.named_parameters()), MODEL_TOL, max_coords))
    return out


def augmentation_checks(seed: int = 0, frames: int = 50) -> list[CheckLine]:
    rng = np.random.default_rng(seed)
    errs = {"rotation closure": 0.0, "flip involution": 0.0, "zero-offset warp identity": 0.0,
            "warp endpoints": 0.0, "energy under rotation": 0.0}
    for _ in range(frames):
        f = IQFrame.from_complex(rng.normal(size=128) + 1j * rng.normal(size=128))
        back = aug.rotate(aug.rotate(f, math.pi / 2), 3 * math.pi / 2)
        errs["rotation closure"] = max(errs["rotation closure"], float(np.abs(back.to_array() - f.to_array()).max()))
        errs["energy under rotation"] = max(errs["energy under rotation"],
                                            abs(aug.rotate(f, rng.uniform(0, 2 * math.pi)).power() - f.power()))
        inv = max(np.abs(aug.flip_h(aug.flip_h(f)).to_array() - f.to_array()).max(),
                  np.abs(aug.flip_v(aug.flip_v(f)).to_array() - f.to_array()).max())
        errs["flip involution"] = max(errs["flip involution"], float(inv))
        same = aug.resample(f, aug.warp_path(f.i.size, np.zeros(4)))
        errs["zero-offset warp identity"] = max(errs["zero-offset warp identity"],
                                                float(np.abs(same.to_array() - f.to_array()).max()))
        path = aug.warp_path(f.i.size, rng.normal(scale=5.0, size=4))
        errs["warp endpoints"] = max(errs["warp endpoints"], abs(path[0]) + abs(path[-1] - (f.i.size - 1)))
    return [CheckLine(k, v < 1e-5, f"max deviation {v:.2e} over {frames} frames") for k, v in errs.items()]


def run_selfcheck(seed: int = 0) -> tuple[bool, list[CheckLine]]:
    lines = kernel_checks(seed) + model_checks(seed) + augmentation_checks(seed)
    return all(c.passed for c in lines), lines
