"""Losses, the combined objective, pseudo-labeling and the training loops."""

import json
import math

import numpy as np
import pytest
import torch
from torch import nn

import amrvit.training as tr
from amrvit.baselines import train_supervised
from amrvit.errors import InvalidArgumentError
from amrvit.model import ViT, ViTConfig
from amrvit.signal_core import IQFrame
from amrvit.training import (Batch, LossWeights, PseudoConfig, Scenario, TrainConfig, classification_loss,
                             contrastive_loss, finetune, pretrain, pseudo_label_select, reconstruction_loss,
                             semi_supervised_loss)

from conftest import make_dataset
from oracles import ce_oracle, nt_xent_oracle


# ---------------------------------------------------------------- reconstruction


def test_mse_cases():
    x = torch.randn(2, 2, 16)
    assert reconstruction_loss(x, x).item() == 0.0
    assert reconstruction_loss(x + 1, x).item() == pytest.approx(1.0, abs=1e-6)


def test_mse_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2, 64)), rng.normal(size=(2, 64))
    oracle = sum((a[r, k] - b[r, k]) ** 2 for r in range(2) for k in range(64)) / 128
    got = reconstruction_loss(IQFrame(a[0], a[1]), IQFrame(b[0], b[1])).item()
    assert abs(got - oracle) < 1e-6


def test_mse_length_mismatch():
    with pytest.raises(InvalidArgumentError):
        reconstruction_loss(torch.zeros(2, 4), torch.zeros(2, 5))


# ---------------------------------------------------------------- NT-Xent


def test_nt_xent_two_pair_example():
    z = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    # hand enumeration: positive sim 1, the other two sims 0
    e2 = math.exp(2.0)
    hand = -math.log(e2 / (e2 + 2.0))
    assert abs(contrastive_loss(z, z.clone(), 0.5).item() - hand) < 1e-6
    assert abs(nt_xent_oracle(z, z, 0.5) - hand) < 1e-12


@pytest.mark.parametrize("trial", range(20))
def test_nt_xent_matches_brute_force(trial):
    g = torch.Generator().manual_seed(trial)
    b = 2 + trial % 7
    z1 = torch.nn.functional.normalize(torch.randn(b, 5, generator=g, dtype=torch.float64), dim=1)
    z2 = torch.nn.functional.normalize(torch.randn(b, 5, generator=g, dtype=torch.float64), dim=1)
    assert abs(contrastive_loss(z1, z2, 0.5).item() - nt_xent_oracle(z1, z2, 0.5)) < 1e-6


def test_nt_xent_uses_cosine_similarity():
    g = torch.Generator().manual_seed(5)
    z1, z2 = torch.randn(4, 3, generator=g, dtype=torch.float64) * 3, torch.randn(4, 3, generator=g, dtype=torch.float64)
    assert abs(contrastive_loss(z1, z2, 0.2).item() - nt_xent_oracle(z1, z2, 0.2)) < 1e-6


def test_nt_xent_symmetry_and_alignment():
    g = torch.Generator().manual_seed(1)
    z1 = torch.nn.functional.normalize(torch.randn(4, 8, generator=g), dim=1)
    z2 = torch.nn.functional.normalize(torch.randn(4, 8, generator=g), dim=1)
    assert contrastive_loss(z1, z2).item() == pytest.approx(contrastive_loss(z2, z1).item(), abs=1e-6)
    eye = torch.eye(4, 8)
    assert nt_xent_oracle(eye, eye, 0.5) < nt_xent_oracle(z1, z2, 0.5)
    assert contrastive_loss(eye, eye).item() < contrastive_loss(z1, z2).item()


def test_nt_xent_needs_two_pairs():
    with pytest.raises(InvalidArgumentError):
        contrastive_loss(torch.ones(1, 4), torch.ones(1, 4))


# ---------------------------------------------------------------- cross-entropy


def test_ce_uniform_is_ln16():
    loss = classification_loss(torch.zeros(3, 16), torch.tensor([0, 7, 15]))
    assert abs(loss.item() - math.log(16)) < 1e-6


def test_ce_decreases_with_scale():
    vals = [classification_loss(s * torch.nn.functional.one_hot(torch.tensor([3]), 16).float(),
                                torch.tensor([3])).item() for s in (1, 10, 100)]
    assert vals[0] > vals[1] > vals[2] >= 0 and vals[2] < 1e-6


def test_ce_matches_scalar_oracle():
    g = torch.Generator().manual_seed(2)
    logits = torch.randn(6, 16, generator=g, dtype=torch.float64) * 4
    labels = torch.tensor([0, 5, 9, 15, 2, 2])
    assert abs(classification_loss(logits, labels).item() - ce_oracle(logits, labels)) < 1e-6


def test_ce_rejects_bad_labels():
    with pytest.raises(InvalidArgumentError):
        classification_loss(torch.zeros(2, 16), torch.tensor([0, 16]))


# ---------------------------------------------------------------- pseudo-labels


def test_pseudo_select_examples():
    probs = torch.tensor([[0.9, 0.1] + [0.0] * 14, [0.6, 0.4] + [0.0] * 14])
    idx, lab = pseudo_label_select(probs, 0.8)
    assert idx.tolist() == [0] and lab.tolist() == [0]
    idx, _ = pseudo_label_select(torch.full((3, 16), 1 / 16), 0.8)
    assert idx.numel() == 0
    idx, lab = pseudo_label_select(probs, 0.0)
    assert idx.tolist() == [0, 1] and lab.tolist() == [0, 0]


def test_pseudo_select_is_strict_and_ties_go_low():
    probs = torch.tensor([[0.8, 0.2, 0.0], [0.1, 0.45, 0.45]])
    idx, lab = pseudo_label_select(probs, 0.8)
    assert idx.numel() == 0
    idx, lab = pseudo_label_select(probs, 0.0)
    assert lab.tolist() == [0, 1]


# ---------------------------------------------------------------- combined objective


class FixedLogits(nn.Module):
    """Classifier stub whose logits are a learnable constant table."""

    def __init__(self, logits):
        super().__init__()
        self.table = nn.Parameter(torch.as_tensor(logits, dtype=torch.float32))

    def forward(self, x):
        return self.table


def vit_batch(b=4, seed=0, labeled=(True, True, False, False)):
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(b, 2, 512, generator=g)
    return Batch(inputs=x + 0.1 * torch.randn(b, 2, 512, generator=g), targets=x,
                 labels=torch.tensor([1, 4, -1, -1][:b]), labeled=torch.tensor(labeled[:b]),
                 view2=x + 0.1 * torch.randn(b, 2, 512, generator=g))


@pytest.fixture(scope="module")
def eval_vit():
    torch.manual_seed(0)
    return ViT(ViTConfig()).eval()


def test_alpha_zero_gives_beta_times_supervised(eval_vit):
    batch = vit_batch()
    out = semi_supervised_loss(batch, eval_vit, LossWeights(0.0, 0.7, 1.0, 1.0), PseudoConfig(threshold=0.0),
                               Scenario.RECON_CONTRASTIVE)
    assert out.total.item() == (0.7 * out.supervised).item()


def test_no_labels_no_confidence_gives_zero_supervised():
    logits = torch.zeros(3, 16)
    batch = Batch(torch.zeros(3, 2, 8), torch.zeros(3, 2, 8), torch.full((3,), -1),
                  torch.zeros(3, dtype=torch.bool))
    out = semi_supervised_loss(batch, FixedLogits(logits), LossWeights(0.0, 1.0, 0.0, 0.0), PseudoConfig(),
                               Scenario.RECON)
    assert out.supervised.item() == 0.0 and out.pseudo_count == 0


def test_components_recombine(eval_vit):
    batch = vit_batch(seed=1)
    w = LossWeights(0.6, 1.3, 0.8, 1.7)
    out = semi_supervised_loss(batch, eval_vit, w, PseudoConfig(threshold=0.0), Scenario.RECON_CONTRASTIVE)
    unsup = w.w_recon * out.recon + w.w_contrast * out.contrastive
    sup = out.cls + 0.5 * out.pseudo_cls
    assert abs(out.unsupervised.item() - unsup.item()) < 1e-6
    assert abs(out.supervised.item() - sup.item()) < 1e-6
    assert abs(out.total.item() - (0.6 * out.unsupervised + 1.3 * out.supervised).item()) < 1e-6


def test_doubling_alpha_doubles_unsupervised_share(eval_vit):
    batch = vit_batch(seed=2)
    a = semi_supervised_loss(batch, eval_vit, LossWeights(1.0, 1.0), PseudoConfig(threshold=0.0),
                             Scenario.RECON_CONTRASTIVE)
    b = semi_supervised_loss(batch, eval_vit, LossWeights(2.0, 1.0), PseudoConfig(threshold=0.0),
                             Scenario.RECON_CONTRASTIVE)
    ua = (a.total - a.beta * a.supervised).item()
    ub = (b.total - b.beta * b.supervised).item()
    assert abs(ub - 2 * ua) < 1e-5
    assert a.unsupervised.item() == b.unsupervised.item()


@pytest.mark.parametrize("scenario,decodes,contrasts", [
    (Scenario.RECON, True, False),
    (Scenario.CONTRASTIVE, False, True),
    (Scenario.RECON_CONTRASTIVE, True, True),
])
def test_scenario_masks_are_strict(monkeypatch, eval_vit, scenario, decodes, contrasts):
    calls = {"decode": 0, "contrast": 0}
    real_decode, real_contrast = eval_vit.decode, tr.contrastive_loss

    def spy_decode(tokens):
        calls["decode"] += 1
        return real_decode(tokens)

    def spy_contrast(*a, **k):
        calls["contrast"] += 1
        return real_contrast(*a, **k)

    monkeypatch.setattr(eval_vit, "decode", spy_decode)
    monkeypatch.setattr(tr, "contrastive_loss", spy_contrast)
    out = semi_supervised_loss(vit_batch(), eval_vit, LossWeights(), None, scenario)
    assert (calls["decode"] > 0) == decodes and (calls["contrast"] > 0) == contrasts
    if not decodes:
        assert out.recon.item() == 0.0
    if not contrasts:
        assert out.contrastive.item() == 0.0


def test_pseudo_rows_exclude_labeled_rows():
    # rows 0 and 1 labeled and very confident; row 2 confident unlabeled; row 3 unsure unlabeled
    logits = torch.zeros(4, 16)
    logits[0, 3] = logits[1, 5] = logits[2, 7] = 20.0
    batch = Batch(torch.zeros(4, 2, 8), torch.zeros(4, 2, 8), torch.tensor([3, 5, -1, -1]),
                  torch.tensor([True, True, False, False]))
    out = semi_supervised_loss(batch, FixedLogits(logits), LossWeights(0.0, 1.0, 0.0, 0.0), PseudoConfig(),
                               Scenario.RECON)
    assert out.pseudo_count == 1
    expected = ce_oracle(logits[2:3], [7])
    assert abs(out.pseudo_cls.item() - expected) < 1e-6


def test_precomputed_pseudo_labels_are_used():
    logits = torch.zeros(3, 16)
    batch = Batch(torch.zeros(3, 2, 8), torch.zeros(3, 2, 8), torch.tensor([0, -1, -1]),
                  torch.tensor([True, False, False]), pseudo_labels=torch.tensor([-1, 9, -1]))
    out = semi_supervised_loss(batch, FixedLogits(logits), LossWeights(0.0, 1.0, 0.0, 0.0), PseudoConfig(),
                               Scenario.RECON)
    assert out.pseudo_count == 1
    assert abs(out.pseudo_cls.item() - math.log(16)) < 1e-6


def test_empty_batch_errors(eval_vit):
    b = Batch(torch.zeros(0, 2, 512), torch.zeros(0, 2, 512), torch.zeros(0, dtype=torch.long),
              torch.zeros(0, dtype=torch.bool))
    with pytest.raises(InvalidArgumentError):
        semi_supervised_loss(b, eval_vit, LossWeights(), None, Scenario.RECON)


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        TrainConfig(scenario="contrastive", batch_size=1)
    with pytest.raises(InvalidArgumentError):
        LossWeights(0.0, 0.0, 0.0, 0.0)
    with pytest.raises(InvalidArgumentError):
        PseudoConfig(threshold=1.0)


# ---------------------------------------------------------------- loops


def small_vit():
    return ViTConfig(layers=2)


def test_pretrain_history_and_determinism(tiny_dataset):
    cfg = TrainConfig(epochs=3, batch_size=16, seed=7, scenario="recon+contrastive")
    a = pretrain(tiny_dataset, cfg.scenario, cfg, small_vit())
    b = pretrain(tiny_dataset, cfg.scenario, cfg, small_vit())
    assert len(a.history) == 3
    assert json.dumps(a.history) == json.dumps(b.history)
    for pa, pb in zip(a.model.parameters(), b.model.parameters()):
        assert torch.equal(pa, pb)


def test_recon_pretraining_reduces_loss():
    ds = make_dataset(("BPSK", "QPSK", "16QAM", "FM"), per_cell=16)
    res = pretrain(ds, "recon", TrainConfig(epochs=50, batch_size=64, seed=0), ViTConfig())
    assert res.history[-1]["total_loss"] < res.history[0]["total_loss"]


def test_full_labels_without_pseudo_is_plain_supervised(tiny_dataset):
    cfg = TrainConfig(epochs=3, batch_size=16, seed=3, label_fraction=1.0)
    torch.manual_seed(cfg.seed)
    model = ViT(small_vit())
    a = finetune(tiny_dataset, model, cfg, PseudoConfig(enabled=False))
    b = train_supervised("vit", tiny_dataset, cfg, small_vit().to_dict())
    c_model = (torch.manual_seed(cfg.seed), ViT(small_vit()))[1]
    c = finetune(tiny_dataset, c_model, cfg, PseudoConfig())  # no unlabeled rows, pseudo path idle
    assert json.dumps(a.history) == json.dumps(b.history) == json.dumps(c.history)


def test_freeze_encoder_only_moves_classifier(tiny_dataset):
    torch.manual_seed(0)
    model = ViT(small_vit())
    before = {n: p.detach().clone() for n, p in model.named_parameters()}
    finetune(tiny_dataset, model, TrainConfig(epochs=2, batch_size=16, freeze_encoder=True), PseudoConfig())
    for n, p in model.named_parameters():
        moved = not torch.equal(before[n], p)
        assert moved == n.startswith("classifier."), n


def test_finetune_requires_labels(tiny_dataset):
    tiny_dataset.labeled[:] = False
    with pytest.raises(InvalidArgumentError):
        finetune(tiny_dataset, ViT(small_vit()), TrainConfig(epochs=1))


def test_pseudo_counts_grow_after_warmup():
    ds = make_dataset(("BPSK", "FM"), per_cell=100, seed=1)
    rng = np.random.default_rng(0)
    for c in np.unique(ds.class_ids):
        rows = np.flatnonzero(ds.class_ids == c)
        ds.labeled[rows] = False
        ds.labeled[rng.choice(rows, 10, replace=False)] = True
    torch.manual_seed(0)
    cfg = TrainConfig(epochs=25, batch_size=32, seed=0, unlabeled_ratio=9)
    res = finetune(ds, ViT(small_vit()), cfg, PseudoConfig(warmup_epochs=5))
    counts = [h["pseudo_count"] for h in res.history]
    assert all(c == 0 for c in counts[:5])
    after = counts[5:]
    assert after[-1] > 0
    peak = 0
    for c in after:
        assert c >= 0.9 * peak, counts
        peak = max(peak, c)
