"""Metrics, per-SNR curves and embedding export."""

import csv

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from amrvit.errors import InvalidArgumentError
from amrvit.evaluation import (embeddings, evaluate, export_embeddings, metrics_from_predictions,
                               per_snr_accuracy, write_metrics_csvs)
from amrvit.model import ViT, ViTConfig

from conftest import make_dataset


class Constant(torch.nn.Module):
    def __init__(self, k):
        super().__init__()
        self.k = k

    def forward(self, x):
        out = torch.zeros(x.shape[0], 16)
        out[:, self.k] = 1.0
        return out


class Oracle(torch.nn.Module):
    """Predicts the class stored in a lookup keyed by the first sample of each frame."""

    def __init__(self, ds):
        super().__init__()
        from amrvit.signal_core import rms_normalize
        self.table = {float(f[0, 0]): int(c) for f, c in zip(rms_normalize(ds.iq), ds.class_ids)}

    def forward(self, x):
        out = torch.zeros(x.shape[0], 16)
        for r in range(x.shape[0]):
            out[r, self.table[float(x[r, 0, 0])]] = 1.0
        return out


@pytest.fixture(scope="module")
def two_snr():
    return make_dataset(("BPSK", "QPSK", "FM", "GMSK"), snrs=(0, 10), per_cell=5)


def test_perfect_predictor(two_snr):
    rec = evaluate(Oracle(two_snr), "vit", two_snr)
    assert rec.overall == 1.0
    assert all(acc == 1.0 for acc, _ in rec.per_snr.values())
    assert np.array_equal(np.diag(rec.confusion), rec.class_counts)


def test_constant_predictor(two_snr):
    k = int(two_snr.class_ids[0])
    rec = evaluate(Constant(k), "cnn", two_snr)
    assert rec.overall == pytest.approx(1 / 4)
    pc = rec.per_class[~np.isnan(rec.per_class)]
    assert sorted(pc.tolist()) == [0.0, 0.0, 0.0, 1.0]
    assert rec.confusion[:, k].sum() == len(two_snr)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(2, 16), st.integers(0, 2**31 - 1))
def test_balanced_overall_is_mean_per_class(n_per, n_cls, seed):
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(n_cls), n_per)
    pred = rng.integers(0, 16, size=y.size)
    rec = metrics_from_predictions(y, pred, np.zeros_like(y))
    rec.check()
    assert rec.overall == pytest.approx(np.nanmean(rec.per_class), abs=1e-12)
    assert rec.per_snr[0][1] == y.size and rec.total == y.size


def test_single_snr_level():
    rec = metrics_from_predictions([1, 2, 3], [1, 2, 0], [10, 10, 10])
    assert list(rec.per_snr) == [10] and rec.per_snr[10] == (pytest.approx(2 / 3), 3)


def test_empty_split_errors():
    with pytest.raises(InvalidArgumentError):
        metrics_from_predictions([], [], [])


def test_per_snr_cap_and_missing_level(two_snr):
    res = per_snr_accuracy(Oracle(two_snr), two_snr, snr_levels=(0, 10, 20), cap=7)
    assert res[0].count == 7 and res[10].count == 7 and res[0].accuracy == 1.0
    assert res[20].count == 0 and res[20].accuracy is None
    full = per_snr_accuracy(Oracle(two_snr), two_snr, cap=None)
    assert full[0].count == 20


def test_evaluation_does_not_touch_parameters(two_snr):
    torch.manual_seed(0)
    m = ViT(ViTConfig(layers=1))
    before = [p.detach().clone() for p in m.parameters()]
    evaluate(m, "vit", two_snr)
    assert all(torch.equal(a, b) for a, b in zip(before, m.parameters()))
    assert m.training


def test_embedding_export(tmp_path, two_snr):
    torch.manual_seed(0)
    m = ViT(ViTConfig(layers=1))
    ds = two_snr.subset(np.array([0, 0, 5, 39]))
    path = export_embeddings(m, ds, tmp_path / "emb.csv")
    rows = list(csv.reader(open(path)))
    assert len(rows[0]) == 66 and rows[0][-2:] == ["class_id", "snr_db"]
    assert len(rows) == 5 and rows[1] == rows[2]
    assert int(rows[4][-1]) == int(ds.snr_db[3])
    emb = embeddings(m, ds)
    assert np.allclose(np.array(rows[3][:64], dtype=float), emb[2], atol=1e-7)


def test_metrics_csvs(tmp_path, two_snr):
    rec = evaluate(Constant(0), "resnet", two_snr)
    write_metrics_csvs(rec, tmp_path)
    names = {p.name for p in tmp_path.iterdir()}
    assert names == {"overall.csv", "per_class.csv", "per_snr.csv", "confusion.csv"}
    per_class = list(csv.DictReader(open(tmp_path / "per_class.csv")))
    assert len(per_class) == 16
