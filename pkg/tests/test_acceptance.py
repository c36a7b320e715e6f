"""Acceptance criteria 1-10, each reporting a single PASS/FAIL line.

Criteria 5-7 share one desk-scale study (8 classes, SNR 0/10/20 dB, 300
frames per cell, 40+40 epochs, 5 seeds). Its results are cached in
``$AMRVIT_STUDY_DIR`` (default ``acceptance_runs/study`` in the repository
root); a missing or partial cache is completed on the spot, which takes
several hours on one CPU core.
"""

import json
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from amrvit.baselines import train_supervised
from amrvit.selfcheck import run_selfcheck
from amrvit.signal_core import CLASS_NAMES, load_rml, write_rml
from amrvit.signal_core.rml import RML2018_CLASSES
from amrvit.study import StudyConfig, mean_accuracy, run_study, unit
from amrvit.training import TrainConfig, classification_loss, contrastive_loss, pseudo_label_select, reconstruction_loss

from conftest import make_dataset, mirrored
from oracles import ce_oracle, nt_xent_oracle

ROOT = Path(__file__).resolve().parent.parent
STUDY_DIR = Path(os.environ.get("AMRVIT_STUDY_DIR", ROOT / "acceptance_runs" / "study"))


@pytest.fixture
def report(request):
    term = request.config.pluginmanager.getplugin("terminalreporter")

    def emit(n, passed, detail):
        line = f"CRITERION {n} {'PASS' if passed else 'FAIL'}: {detail}"
        if term is not None:
            term.write_line("")
            term.write_line(line)
        else:
            print(line)
        assert passed, line

    return emit


@pytest.fixture(scope="module")
def study():
    cfg = StudyConfig()
    return cfg, run_study(cfg, STUDY_DIR)


# ---------------------------------------------------------------- 1


def test_c1_gradient_integrity(report):
    t0 = time.time()
    ok, lines = run_selfcheck()
    dt = time.time() - t0
    worst = max((ln for ln in lines if "rel error" in ln.detail),
                key=lambda ln: float(ln.detail.split()[3]))
    failed = [ln.name for ln in lines if not ln.passed]
    report(1, ok and dt < 120, f"{len(lines)} checks, failed {failed or 'none'}, worst {worst.name} "
                               f"({worst.detail}), {dt:.1f}s (limit 120s)")


# ---------------------------------------------------------------- 2


def test_c2_augmentation_suite(report):
    t0 = time.time()
    proc = subprocess.run([sys.executable, "-m", "pytest", str(ROOT / "tests" / "test_augmentation.py"), "-q",
                           "-p", "no:cacheprovider"], capture_output=True, text=True, cwd=ROOT)
    dt = time.time() - t0
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    report(2, proc.returncode == 0 and dt < 60, f"{summary}; 200 hypothesis frames per property, {dt:.1f}s (limit 60s)")


# ---------------------------------------------------------------- 3


def test_c3_loss_oracles(report):
    errs = []
    for trial in range(20):
        g = torch.Generator().manual_seed(100 + trial)
        b = 2 + trial % 7
        z1 = torch.randn(b, 16, generator=g, dtype=torch.float64)
        z2 = torch.randn(b, 16, generator=g, dtype=torch.float64)
        errs.append(abs(contrastive_loss(z1, z2, 0.5).item() - nt_xent_oracle(z1, z2, 0.5)))
    ce_err = abs(classification_loss(torch.zeros(4, 16), torch.tensor([0, 3, 8, 15])).item() - math.log(16))
    g = torch.Generator().manual_seed(7)
    logits = torch.randn(5, 16, generator=g, dtype=torch.float64)
    labels = [1, 2, 3, 4, 5]
    ce_rand = abs(classification_loss(logits, torch.tensor(labels)).item() - ce_oracle(logits, labels))
    a = torch.randn(3, 2, 32, generator=g, dtype=torch.float64)
    b = torch.randn(3, 2, 32, generator=g, dtype=torch.float64)
    mse_oracle = sum((float(a.flatten()[k]) - float(b.flatten()[k])) ** 2 for k in range(a.numel())) / a.numel()
    mse_err = abs(reconstruction_loss(a, b).item() - mse_oracle)
    ok = max(errs) < 1e-6 and ce_err < 1e-6 and ce_rand < 1e-6 and mse_err < 1e-6
    report(3, ok, f"NT-Xent max err {max(errs):.1e} over 20 batches (B 2..8); CE uniform err {ce_err:.1e}, "
                  f"random err {ce_rand:.1e}; MSE err {mse_err:.1e} (tol 1e-6)")


# ---------------------------------------------------------------- 4


def test_c4_overfit_sanity(report):
    ds = mirrored(make_dataset(("BPSK", "QPSK"), snrs=(10,), per_cell=100, seed=3))
    cfg = TrainConfig(epochs=200, batch_size=32, seed=0, label_fraction=1.0)
    t0 = time.time()
    parts = []
    ok = True
    for kind in ("vit", "cnn", "resnet"):
        res = train_supervised(kind, ds, cfg)
        accs = [h["val_acc"] for h in res.history]
        first = next((k + 1 for k, a in enumerate(accs) if a >= 0.95), None)
        ok &= first is not None
        parts.append(f"{kind} best {max(accs):.3f}, >=95% at epoch {first}")
    dt = time.time() - t0
    report(4, ok and dt < 900, "; ".join(parts) + f"; {dt:.0f}s (limit 900s)")


# ---------------------------------------------------------------- 5-7


def test_c5_scenario_ordering(report, study):
    cfg, res = study
    wins, parts, seconds = 0, [], 0.0
    for s in cfg.seeds:
        s1, s3 = unit(res, s, "recon", 0.10), unit(res, s, "contrastive", 0.10)
        wins += s1["test_acc"] >= s3["test_acc"]
        parts.append(f"seed {s}: {s1['test_acc']:.3f} vs {s3['test_acc']:.3f}")
        seconds += sum(u["pretrain_seconds"] + u["finetune_seconds"] for u in (s1, s3))
    ok = wins >= 4 and seconds < 7200
    report(5, ok, f"S1 >= S3 in {wins}/5 seeds ({'; '.join(parts)}); "
                  f"S1+S3 training time {seconds / 3600:.2f} h (limit 2 h)")


def test_c6_label_monotonicity(report, study):
    cfg, res = study
    means = [mean_accuracy(res, "recon", f) for f in cfg.label_fractions]
    ok = all(b >= a - 0.01 for a, b in zip(means, means[1:]))
    shown = ", ".join(f"{f:.0%}: {m:.4f}" for f, m in zip(cfg.label_fractions, means))
    report(6, ok, f"S1 mean accuracy {shown} (1-point tolerance)")


def test_c7_snr_trend(report, study):
    cfg, res = study
    lo, hi = str(min(cfg.snr_list_db)), str(max(cfg.snr_list_db))
    units = [unit(res, s, "recon", 0.10) for s in cfg.seeds]
    a_lo = float(np.mean([u["per_snr"][lo] for u in units]))
    a_hi = float(np.mean([u["per_snr"][hi] for u in units]))
    report(7, a_hi - a_lo >= 0.10, f"S1 (10% labels) accuracy {a_hi:.4f} at {hi} dB vs {a_lo:.4f} at {lo} dB, "
                                   f"gap {100 * (a_hi - a_lo):.1f} points (need 10)")


# ---------------------------------------------------------------- 8


def test_c8_pseudo_label_sets(report):
    probs = torch.tensor([
        [0.9990, 0.0010, 0.0, 0.0],   # just at 0.999: excluded there (strict)
        [0.9995, 0.0005, 0.0, 0.0],
        [0.2000, 0.8000, 0.0, 0.0],   # exactly 0.8
        [0.1000, 0.0500, 0.8500, 0.0],
        [0.2500, 0.2500, 0.2500, 0.2500],
        [0.0000, 0.4000, 0.0, 0.6000],
        [0.5000, 0.5000, 0.0, 0.0],   # exactly 0.5, tie resolves to class 0
    ], dtype=torch.float64)
    expected = {
        0.0: ([0, 1, 2, 3, 4, 5, 6], [0, 0, 1, 2, 0, 3, 0]),
        0.5: ([0, 1, 2, 3, 5], [0, 0, 1, 2, 3]),
        0.8: ([0, 1, 3], [0, 0, 2]),
        0.999: ([1], [0]),
    }
    bad = []
    for t, (idx, lab) in expected.items():
        got_i, got_l = pseudo_label_select(probs, t)
        if got_i.tolist() != idx or got_l.tolist() != lab:
            bad.append(t)
    report(8, not bad, f"thresholds {sorted(expected)}, mismatches {bad or 'none'}")


# ---------------------------------------------------------------- 9


def test_c9_reproducibility(report, tmp_path):
    import amrvit.cli as cli

    torch.set_num_threads(1)
    blobs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        doc = {"data": {"schemes": ["BPSK", "QPSK", "16QAM", "FM"], "snr_list_db": [0, 20], "frames_per_cell": 12},
               "model": {"layers": 2},
               "training": {"pretrain_epochs": 2, "finetune_epochs": 3, "batch_size": 16, "seeds": [5],
                            "scenario": "recon+contrastive", "pseudo": {"warmup_epochs": 1}},
               "output_dir": str(out)}
        path = tmp_path / f"cfg{k}.json"
        path.write_text(json.dumps(doc))
        for cmd in ("pretrain", "finetune", "evaluate"):
            assert cli.main([cmd, "--config", str(path)]) == 0
        ev = out / "seed5" / "eval" / "finetune"
        blobs.append({p.name: p.read_bytes() for p in sorted(ev.glob("*.csv"))})
    same = blobs[0] == blobs[1]
    report(9, same and len(blobs[0]) == 5, f"{len(blobs[0])} metrics CSVs compared byte for byte, identical={same}")


# ---------------------------------------------------------------- 10


def test_c10_rml_round_trip(report, tmp_path):
    rng = np.random.default_rng(0)
    snrs = [-6, -2, 0, 8, 20, 24]
    per_cell = 5
    cls, snr = np.meshgrid(np.arange(24), snrs, indexing="ij")
    cls, snr = np.repeat(cls.ravel(), per_cell), np.repeat(snr.ravel(), per_cell)
    order = rng.permutation(cls.size)
    cls, snr = cls[order], snr[order]
    x = rng.normal(size=(cls.size, 1024, 2)).astype(np.float32)
    x[:, 0, 0] = cls
    write_rml(tmp_path / "rml.h5", x, cls, snr, RML2018_CLASSES)
    ds = load_rml(tmp_path / "rml.h5", CLASS_NAMES, snr_min_db=-2, snr_max_db=20, per_cell=4)
    cells = ds.cell_counts()
    levels = [s for s in snrs if -2 <= s <= 20]
    counts_ok = len(cells) == 16 * len(levels) and set(cells.values()) == {4}
    mapping_ok = all(RML2018_CLASSES[int(f[0, 0])] == CLASS_NAMES[c] for f, c in zip(ds.iq, ds.class_ids))
    report(10, counts_ok and mapping_ok, f"{len(ds)} frames in {len(cells)} cells of 4 "
                                         f"(expected {16 * len(levels)}), class mapping exact={mapping_ok}")
