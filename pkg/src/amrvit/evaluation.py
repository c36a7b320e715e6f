"""Accuracy metrics, confusion matrices, per-SNR curves and embedding export."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import torch
from torch import nn

from amrvit.errors import InvalidArgumentError
from amrvit.model import ViT
from amrvit.signal_core.dataset import Dataset
from amrvit.signal_core.types import CLASS_NAMES, NUM_CLASSES, rms_normalize
from amrvit.training import predict


@dataclass
class MetricsRecord:
    overall: float
    per_class: np.ndarray  # [16], nan where a class has no samples
    per_snr: dict[int, tuple[float, int]]  # snr -> (accuracy, count)
    confusion: np.ndarray  # [16, 16], rows = truth
    class_counts: np.ndarray
    total: int
    model_kind: str = "vit"
    extra: dict = field(default_factory=dict)

    def check(self) -> None:
        assert np.array_equal(self.confusion.sum(axis=1), self.class_counts)
        assert math.isclose(self.overall, np.trace(self.confusion) / self.total, rel_tol=0, abs_tol=1e-12)


def metrics_from_predictions(y_true: np.ndarray, y_pred: np.ndarray, snr_db: np.ndarray,
                             model_kind: str = "vit") -> MetricsRecord:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    snr_db = np.asarray(snr_db, dtype=np.int64)
    if y_true.size == 0:
        raise InvalidArgumentError("cannot evaluate an empty split")
    conf = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)
    counts = conf.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(counts > 0, np.diag(conf) / np.maximum(counts, 1), np.nan)
    correct = y_true == y_pred
    per_snr = {int(s): (float(correct[snr_db == s].mean()), int((snr_db == s).sum()))
               for s in np.unique(snr_db)}
    return MetricsRecord(float(np.trace(conf) / y_true.size), per_class, per_snr, conf, counts,
                         int(y_true.size), model_kind)


def evaluate(model: nn.Module, model_kind: str, ds_split: Dataset) -> MetricsRecord:
    """Inference-mode argmax evaluation over every sample of ``ds_split``."""
    if len(ds_split) == 0:
        raise InvalidArgumentError("cannot evaluate an empty split")
    pred = predict(model, rms_normalize(ds_split.iq))
    rec = metrics_from_predictions(ds_split.class_ids, pred, ds_split.snr_db, model_kind)
    rec.check()
    return rec


@dataclass
class SnrAccuracy:
    accuracy: float | None  # None when the level has no samples
    count: int


def per_snr_accuracy(model: nn.Module, ds_split: Dataset, snr_levels: Iterable[int] | None = None,
                     cap: int | None = 700, seed: int = 0) -> dict[int, SnrAccuracy]:
    """Accuracy at each SNR level, over at most ``cap`` samples drawn without replacement."""
    levels = sorted(set(ds_split.snr_db.tolist())) if snr_levels is None else list(snr_levels)
    rng = np.random.default_rng(seed)
    out = {}
    for s in levels:
        idx = np.flatnonzero(ds_split.snr_db == s)
        if idx.size == 0:
            out[int(s)] = SnrAccuracy(None, 0)
            continue
        if cap is not None and idx.size > cap:
            idx = np.sort(rng.choice(idx, size=cap, replace=False))
        pred = predict(model, rms_normalize(ds_split.iq[idx]))
        out[int(s)] = SnrAccuracy(float(np.mean(pred == ds_split.class_ids[idx])), int(idx.size))
    return out


@torch.no_grad()
def embeddings(model: ViT, ds_split: Dataset, batch_size: int = 512) -> np.ndarray:
    was_training = model.training
    model.eval()
    x = rms_normalize(ds_split.iq)
    out = [model.embed(torch.from_numpy(x[a:a + batch_size])).numpy() for a in range(0, len(ds_split), batch_size)]
    model.train(was_training)
    return np.concatenate(out) if out else np.zeros((0, model.cfg.embed_dim), dtype=np.float32)


def export_embeddings(model: ViT, ds_split: Dataset, path: str | Path) -> Path:
    """CSV of pooled encoder outputs with ``class_id`` and ``snr_db`` columns."""
    path = Path(path)
    emb = embeddings(model, ds_split)
    try:
        fh = open(path, "w", newline="")
    except OSError as err:
        raise OSError(f"cannot write embeddings to {path}: {err}") from err
    with fh:
        w = csv.writer(fh)
        w.writerow([f"e{k}" for k in range(emb.shape[1])] + ["class_id", "snr_db"])
        for row, c, s in zip(emb, ds_split.class_ids, ds_split.snr_db):
            w.writerow([repr(float(v)) for v in row] + [int(c), int(s)])
    return path


def write_metrics_csvs(rec: MetricsRecord, out_dir: str | Path) -> None:
    """``overall.csv``, ``per_class.csv``, ``per_snr.csv`` and ``confusion.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "overall.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model_kind", "overall_accuracy", "total"])
        w.writerow([rec.model_kind, repr(rec.overall), rec.total])
    with open(out / "per_class.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class_id", "class_name", "count", "accuracy"])
        for k in range(NUM_CLASSES):
            acc = "" if math.isnan(rec.per_class[k]) else repr(float(rec.per_class[k]))
            w.writerow([k, CLASS_NAMES[k], int(rec.class_counts[k]), acc])
    with open(out / "per_snr.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["snr_db", "count", "accuracy"])
        for s, (acc, n) in sorted(rec.per_snr.items()):
            w.writerow([s, n, repr(acc)])
    with open(out / "confusion.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + CLASS_NAMES)
        for k in range(NUM_CLASSES):
            w.writerow([CLASS_NAMES[k]] + rec.confusion[k].tolist())
