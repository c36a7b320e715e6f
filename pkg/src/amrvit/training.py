"""Losses, pseudo-label selection and the pretrain / fine-tune loops."""

from __future__ import annotations

import copy
import csv
import enum
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from amrvit import diff_core as dc
from amrvit.augmentation import AugmentPolicy, augment_batch
from amrvit.errors import InvalidArgumentError
from amrvit.model import ViT, ViTConfig
from amrvit.signal_core.dataset import TRAIN, VAL, Dataset
from amrvit.signal_core.types import IQFrame, rms_normalize

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ["epoch", "lr", "total_loss", "recon_loss", "contrastive_loss", "cls_loss",
                   "pseudo_count", "val_acc", "model_kind"]


class TrainingError(RuntimeError):
    """A numeric failure during training, tagged with the epoch it happened in."""


class Scenario(enum.Enum):
    RECON = "recon"
    RECON_CONTRASTIVE = "recon+contrastive"
    CONTRASTIVE = "contrastive"

    @property
    def uses_recon(self) -> bool:
        return self is not Scenario.CONTRASTIVE

    @property
    def uses_contrastive(self) -> bool:
        return self is not Scenario.RECON


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    w_recon: float = 1.0
    w_contrast: float = 1.0

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.w_recon, self.w_contrast)
        if min(vals) < 0 or max(vals) <= 0:
            raise InvalidArgumentError(f"loss weights must be >= 0 with at least one positive, got {vals}")

    def for_scenario(self, scenario: Scenario) -> "LossWeights":
        return replace(self,
                       w_recon=self.w_recon if scenario.uses_recon else 0.0,
                       w_contrast=self.w_contrast if scenario.uses_contrastive else 0.0)


@dataclass(frozen=True)
class PseudoConfig:
    threshold: float = 0.8
    weight: float = 0.5
    warmup_epochs: int = 5
    enabled: bool = True
    refresh: str = "batch"  # or "epoch"

    def __post_init__(self):
        if not 0 <= self.threshold < 1:
            raise InvalidArgumentError(f"pseudo-label threshold must be in [0, 1), got {self.threshold}")
        if not 0 <= self.weight <= 1:
            raise InvalidArgumentError(f"pseudo-label weight must be in [0, 1], got {self.weight}")
        if self.refresh not in ("batch", "epoch"):
            raise InvalidArgumentError(f"refresh must be 'batch' or 'epoch', got {self.refresh!r}")


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128
    seed: int = 0
    label_fraction: float = 0.1
    scenario: Scenario = Scenario.RECON
    base_lr: float = 1e-3
    step_size: int = 15
    gamma: float = 0.90
    weight_decay: float = 0.0
    temperature: float = 0.5
    weights: LossWeights = field(default_factory=LossWeights)
    # fine-tuning only
    finetune_alpha: float = 0.0
    unlabeled_ratio: int = 1
    freeze_encoder: bool = False
    augment_finetune: bool = False
    policy: AugmentPolicy = field(default_factory=AugmentPolicy)

    def __post_init__(self):
        if isinstance(self.scenario, str):
            self.scenario = Scenario(self.scenario)
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidArgumentError("epochs must be >= 0 and batch_size >= 1")
        if self.scenario.uses_contrastive and self.batch_size < 2:
            raise InvalidArgumentError("contrastive training needs batch_size >= 2")

    @property
    def schedule(self) -> dc.LrSchedule:
        return dc.LrSchedule(self.base_lr, self.step_size, self.gamma)


# ---------------------------------------------------------------- losses


def _frame_tensor(x) -> torch.Tensor:
    if isinstance(x, IQFrame):
        return torch.from_numpy(x.to_array())
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x))


def reconstruction_loss(pred, original) -> torch.Tensor:
    """Mean squared error over every I and Q value."""
    pred, original = _frame_tensor(pred), _frame_tensor(original)
    if pred.shape != original.shape:
        raise InvalidArgumentError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(original.shape)}")
    d = pred - original
    return (d * d).mean()


def contrastive_loss(z1: torch.Tensor, z2: torch.Tensor, temperature: float = 0.5) -> torch.Tensor:
    """NT-Xent with cosine similarity; row ``k`` of ``z1`` pairs with row ``k`` of ``z2``."""
    if z1.shape != z2.shape or z1.dim() != 2:
        raise InvalidArgumentError(f"z1 and z2 must be matching [B, d] batches, got {tuple(z1.shape)}, {tuple(z2.shape)}")
    b = z1.shape[0]
    if b < 2:
        raise InvalidArgumentError(f"contrastive loss needs at least 2 pairs, got {b}")
    z = torch.cat([z1, z2], dim=0)
    z = z / torch.clamp_min(torch.sqrt((z * z).sum(dim=1, keepdim=True)), 1e-12)
    sim = (z @ z.T) / temperature
    eye = torch.eye(2 * b, dtype=torch.bool, device=z.device)
    # self-similarity is excluded from every denominator
    sim = sim.masked_fill(eye, -1e9)
    target = torch.cat([torch.arange(b, 2 * b), torch.arange(0, b)]).to(z.device)
    logp = dc.log_softmax(sim, dim=1)
    return -logp[torch.arange(2 * b), target].mean()


def classification_loss(logits: torch.Tensor, labels) -> torch.Tensor:
    """Mean cross-entropy with a max-shifted log-softmax."""
    labels = torch.as_tensor(labels, dtype=torch.long)
    k = logits.shape[-1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= k):
        raise InvalidArgumentError(f"labels must lie in 0..{k - 1}")
    if labels.shape[0] != logits.shape[0]:
        raise InvalidArgumentError("one label per logit row is required")
    logp = dc.log_softmax(logits, dim=-1)
    return -logp[torch.arange(labels.shape[0]), labels].mean()


def pseudo_label_select(probs: torch.Tensor, threshold: float) -> tuple[torch.Tensor, torch.Tensor]:
    """Rows whose top probability is strictly above ``threshold``, with argmax labels."""
    probs = torch.as_tensor(probs)
    if probs.numel() == 0:
        empty = torch.zeros(0, dtype=torch.long)
        return empty, empty
    conf, labels = probs.max(dim=-1)  # first maximal index on ties
    idx = torch.nonzero(conf > threshold, as_tuple=False).reshape(-1)
    return idx, labels[idx]


# ---------------------------------------------------------------- combined objective


@dataclass
class Batch:
    """``inputs`` feed the encoder; ``targets`` are the clean frames.

    ``labels`` holds ground truth where ``labeled`` is set (ignored elsewhere).
    ``pseudo_labels`` (``-1`` = none), when given, replaces per-batch selection.
    """

    inputs: torch.Tensor
    targets: torch.Tensor
    labels: torch.Tensor
    labeled: torch.Tensor
    view2: torch.Tensor | None = None
    pseudo_labels: torch.Tensor | None = None

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass
class LossBreakdown:
    total: torch.Tensor
    unsupervised: torch.Tensor
    supervised: torch.Tensor
    recon: torch.Tensor
    contrastive: torch.Tensor
    cls: torch.Tensor
    pseudo_cls: torch.Tensor
    pseudo_count: int
    alpha: float
    beta: float


def semi_supervised_loss(batch: Batch, model: nn.Module, weights: LossWeights, pseudo: PseudoConfig | None,
                         scenario: Scenario, temperature: float = 0.5) -> LossBreakdown:
    """``alpha * L_u + beta * L_s`` for one batch.

    ``L_u = w_recon * MSE(decode(encode(inputs)), targets) + w_contrast * NT-Xent``
    (terms outside ``scenario`` are never evaluated). ``L_s`` is the mean CE on
    labeled rows plus ``pseudo.weight`` times the mean CE on unlabeled rows
    whose confidence clears ``pseudo.threshold``. Passing ``pseudo=None`` or a
    disabled config switches pseudo-labeling off.
    """
    if len(batch) == 0:
        raise InvalidArgumentError("empty batch")
    w = weights.for_scenario(scenario)
    zero = batch.inputs.new_zeros(())
    recon = contrastive = cls = pseudo_cls = zero
    pseudo_count = 0
    use_pseudo = pseudo is not None and pseudo.enabled
    need_unsup = w.alpha > 0 and (w.w_recon > 0 or w.w_contrast > 0)
    need_sup = w.beta > 0 and (bool(batch.labeled.any()) or (use_pseudo and not bool(batch.labeled.all())))

    tokens = pooled = None
    if need_unsup:
        if not isinstance(model, ViT):
            raise InvalidArgumentError("unsupervised terms need the ViT model")
        tokens = model.encode(model.patchify(batch.inputs))
        pooled = model.pool_mean(tokens)
        if w.w_recon > 0:
            recon = reconstruction_loss(model.decode(tokens), batch.targets)
        if w.w_contrast > 0:
            if batch.view2 is None:
                raise InvalidArgumentError("contrastive term needs a second view")
            z1 = model.project(pooled)
            z2 = model.project(model.embed(batch.view2))
            contrastive = contrastive_loss(z1, z2, temperature)
    unsup = w.w_recon * recon + w.w_contrast * contrastive

    if need_sup:
        logits = model.classify(pooled) if pooled is not None else model(batch.inputs)
        lab = batch.labeled
        if lab.any():
            cls = classification_loss(logits[lab], batch.labels[lab])
        if use_pseudo and (~lab).any():
            unl = torch.nonzero(~lab, as_tuple=False).reshape(-1)
            if batch.pseudo_labels is not None:
                pl = batch.pseudo_labels[unl]
                keep = pl >= 0
                rows, targets = unl[keep], pl[keep]
            else:
                probs = dc.softmax(logits[unl].detach(), dim=-1)
                sel, targets = pseudo_label_select(probs, pseudo.threshold)
                rows = unl[sel]
            pseudo_count = int(rows.numel())
            if pseudo_count:
                pseudo_cls = classification_loss(logits[rows], targets)
    sup = cls + (pseudo.weight * pseudo_cls if use_pseudo else zero)
    total = w.alpha * unsup + w.beta * sup if need_unsup else w.beta * sup
    return LossBreakdown(total, unsup, sup, recon, contrastive, cls, pseudo_cls, pseudo_count, w.alpha, w.beta)


# ---------------------------------------------------------------- loops


@dataclass
class TrainResult:
    model: nn.Module
    history: list[dict]
    best_epoch: int | None = None
    best_val_acc: float | None = None


def _named(model: nn.Module, only: Sequence[str] | None = None) -> dict[str, torch.Tensor]:
    params = dict(model.named_parameters())
    return {n: params[n] for n in only} if only is not None else params


def _step(model: nn.Module, loss: torch.Tensor, state: dc.OptimizerState, trainable: dict[str, torch.Tensor]):
    for p in model.parameters():
        p.grad = None
    if not loss.requires_grad:
        return
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss.item()}")
    loss.backward()
    dc.adam_step(trainable, {n: p.grad for n, p in trainable.items()}, state)


def _train_indices(ds: Dataset) -> np.ndarray:
    idx = np.flatnonzero(ds.split == TRAIN)
    return idx if idx.size else np.arange(len(ds))


@torch.no_grad()
def predict(model: nn.Module, iq: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Argmax class per RMS-normalised frame, in inference mode."""
    was_training = model.training
    model.eval()
    out = []
    for a in range(0, iq.shape[0], batch_size):
        out.append(model(torch.from_numpy(iq[a:a + batch_size])).argmax(dim=-1).numpy())
    model.train(was_training)
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def pretrain(ds: Dataset, scenario: Scenario | str, cfg: TrainConfig, vit_cfg: ViTConfig | None = None,
             model: ViT | None = None) -> TrainResult:
    """Label-free pretraining on the training split.

    Every epoch each training frame is augmented once (plus a second,
    independent view when the scenario has a contrastive term).
    """
    scenario = Scenario(scenario) if isinstance(scenario, str) else scenario
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model = model if model is not None else ViT(vit_cfg)
    model.train()
    clean = rms_normalize(ds.iq[_train_indices(ds)])
    n = clean.shape[0]
    state = dc.OptimizerState(lr=cfg.base_lr, weight_decay=cfg.weight_decay)
    trainable = _named(model)
    weights = replace(cfg.weights, alpha=cfg.weights.alpha or 1.0, beta=0.0)
    min_batch = 2 if scenario.uses_contrastive else 1
    history = []
    for epoch in range(cfg.epochs):
        state.lr = dc.lr_at(cfg.schedule, epoch)
        perm = rng.permutation(n)
        sums = np.zeros(3)
        steps = 0
        try:
            for a in range(0, n, cfg.batch_size):
                idx = perm[a:a + cfg.batch_size]
                if idx.size < min_batch:
                    continue
                x = clean[idx]
                v1, _ = augment_batch(x, rng, cfg.policy)
                v2 = augment_batch(x, rng, cfg.policy)[0] if scenario.uses_contrastive else None
                batch = Batch(torch.from_numpy(v1), torch.from_numpy(x),
                              torch.full((idx.size,), -1, dtype=torch.long), torch.zeros(idx.size, dtype=torch.bool),
                              None if v2 is None else torch.from_numpy(v2))
                out = semi_supervised_loss(batch, model, weights, None, scenario, cfg.temperature)
                _step(model, out.total, state, trainable)
                sums += (out.total.item(), out.recon.item(), out.contrastive.item())
                steps += 1
        except (FloatingPointError, ValueError) as err:
            raise TrainingError(f"pretraining failed in epoch {epoch}: {err}") from err
        means = [float(v) for v in sums / max(steps, 1)]
        history.append({"epoch": epoch, "lr": state.lr, "total_loss": means[0], "recon_loss": means[1],
                        "contrastive_loss": means[2], "cls_loss": 0.0, "pseudo_count": 0,
                        "val_acc": float("nan"), "model_kind": "vit"})
        log.info("pretrain %s epoch %d loss %.5f", scenario.value, epoch, means[0])
    return TrainResult(model, history)


def finetune(ds: Dataset, model: nn.Module, cfg: TrainConfig, pseudo: PseudoConfig | None = None,
             model_kind: str = "vit") -> TrainResult:
    """Train the classification path on the labeled training rows.

    An epoch is one pass over the labeled rows; once pseudo-labeling is active,
    each labeled batch is joined by ``unlabeled_ratio`` times as many unlabeled
    rows drawn from a cycling shuffle. The model is restored to the epoch with
    the best validation accuracy before returning.
    """
    pseudo = pseudo or PseudoConfig(enabled=False)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    train = _train_indices(ds)
    lab_idx = train[ds.labeled[train]]
    unl_idx = train[~ds.labeled[train]]
    if lab_idx.size == 0:
        raise InvalidArgumentError("fine-tuning needs at least one labeled training sample")
    x_lab = rms_normalize(ds.iq[lab_idx])
    y_lab = ds.class_ids[lab_idx]
    x_unl = rms_normalize(ds.iq[unl_idx]) if unl_idx.size else None
    val_idx = np.flatnonzero(ds.split == VAL)
    x_val = rms_normalize(ds.iq[val_idx]) if val_idx.size else None
    y_val = ds.class_ids[val_idx]

    is_vit = isinstance(model, ViT)
    weights = replace(cfg.weights, alpha=cfg.finetune_alpha) if cfg.finetune_alpha > 0 else \
        LossWeights(alpha=0.0, beta=cfg.weights.beta or 1.0, w_recon=0.0, w_contrast=0.0)
    scenario = cfg.scenario
    need_view2 = is_vit and weights.alpha > 0 and scenario.uses_contrastive
    trainable = _named(model, model.head_parameter_names() if (cfg.freeze_encoder and is_vit) else None)
    state = dc.OptimizerState(lr=cfg.base_lr, weight_decay=cfg.weight_decay)
    model.train()

    best_state, best_acc, best_epoch = None, -1.0, None
    unl_perm, unl_pos = (rng.permutation(unl_idx.size) if unl_idx.size else None), 0
    history = []
    for epoch in range(cfg.epochs):
        state.lr = dc.lr_at(cfg.schedule, epoch)
        active = pseudo.enabled and epoch >= pseudo.warmup_epochs and x_unl is not None
        epoch_pseudo = None
        if active and pseudo.refresh == "epoch":
            probs = _probabilities(model, x_unl)
            rows, labels = pseudo_label_select(torch.from_numpy(probs), pseudo.threshold)
            epoch_pseudo = np.full(x_unl.shape[0], -1, dtype=np.int64)
            epoch_pseudo[rows.numpy()] = labels.numpy()
        perm = rng.permutation(lab_idx.size)
        sums = np.zeros(4)
        steps = pseudo_total = 0
        try:
            for a in range(0, lab_idx.size, cfg.batch_size):
                li = perm[a:a + cfg.batch_size]
                xs, ys, flags = [x_lab[li]], [y_lab[li]], [np.ones(li.size, dtype=bool)]
                pl = [np.full(li.size, -1, dtype=np.int64)]
                if active:
                    k = min(cfg.unlabeled_ratio * li.size, x_unl.shape[0])
                    take = np.take(unl_perm, np.arange(unl_pos, unl_pos + k), mode="wrap")
                    unl_pos = (unl_pos + k) % unl_perm.size
                    xs.append(x_unl[take])
                    ys.append(np.full(k, -1, dtype=np.int64))
                    flags.append(np.zeros(k, dtype=bool))
                    pl.append(epoch_pseudo[take] if epoch_pseudo is not None else np.full(k, -1, dtype=np.int64))
                clean = np.concatenate(xs)
                inputs = augment_batch(clean, rng, cfg.policy)[0] if cfg.augment_finetune else clean
                view2 = augment_batch(clean, rng, cfg.policy)[0] if need_view2 else None
                batch = Batch(torch.from_numpy(inputs), torch.from_numpy(clean),
                              torch.from_numpy(np.concatenate(ys)), torch.from_numpy(np.concatenate(flags)),
                              None if view2 is None else torch.from_numpy(view2),
                              torch.from_numpy(np.concatenate(pl)) if epoch_pseudo is not None else None)
                if need_view2 and len(batch) < 2:
                    continue
                out = semi_supervised_loss(batch, model, weights, pseudo if active else None, scenario,
                                           cfg.temperature)
                _step(model, out.total, state, trainable)
                sums += (out.total.item(), out.recon.item(), out.contrastive.item(), out.supervised.item())
                pseudo_total += out.pseudo_count
                steps += 1
        except (FloatingPointError, ValueError) as err:
            raise TrainingError(f"fine-tuning failed in epoch {epoch}: {err}") from err
        means = [float(v) for v in sums / max(steps, 1)]
        val_acc = float(np.mean(predict(model, x_val) == y_val)) if x_val is not None else float("nan")
        history.append({"epoch": epoch, "lr": state.lr, "total_loss": means[0], "recon_loss": means[1],
                        "contrastive_loss": means[2], "cls_loss": means[3], "pseudo_count": pseudo_total,
                        "val_acc": val_acc, "model_kind": model_kind})
        log.info("finetune epoch %d loss %.5f val_acc %.4f pseudo %d", epoch, means[0], val_acc, pseudo_total)
        score = val_acc if not math.isnan(val_acc) else float(epoch)
        if score > best_acc:
            best_acc, best_epoch = score, epoch
            best_state = copy.deepcopy(model.state_dict())
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, history, best_epoch, best_acc if x_val is not None else None)


@torch.no_grad()
def _probabilities(model: nn.Module, iq: np.ndarray, batch_size: int = 512) -> np.ndarray:
    was_training = model.training
    model.eval()
    out = [dc.softmax(model(torch.from_numpy(iq[a:a + batch_size])), dim=-1).numpy()
           for a in range(0, iq.shape[0], batch_size)]
    model.train(was_training)
    return np.concatenate(out)


def write_history_csv(path: str | Path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
        w.writeheader()
        for row in history:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
