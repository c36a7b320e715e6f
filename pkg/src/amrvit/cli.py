"""Command-line entry point: ``amrvit <subcommand> --config run.json [overrides]``.

Outputs for seed ``s`` go to ``<output_dir>/seed<s>/``; the shared dataset
file lives at ``<output_dir>/dataset.bin`` unless ``data.dataset_path`` says
otherwise. Every command that produces artifacts also writes
``<command>.config.json`` holding the resolved config and seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from amrvit.artifacts import load_model, save_model
from amrvit.baselines import train_supervised
from amrvit.config import RunConfig, load_config, parse_config
from amrvit.errors import (AugmentationError, ConfigError, InsufficientSamplesError, InvalidArgumentError,
                           MalformedLayoutError, NonFiniteGradientError, UnknownClassError)
from amrvit.evaluation import evaluate, export_embeddings, per_snr_accuracy, write_metrics_csvs
from amrvit.report import write_report
from amrvit.selfcheck import run_selfcheck
from amrvit.signal_core.dataset import (Dataset, SyntheticConfig, build_synthetic_dataset, label_mask, load_dataset,
                                        save_dataset, split_dataset)
from amrvit.signal_core.rml import load_rml
from amrvit.training import TrainingError, finetune, pretrain, write_history_csv

log = logging.getLogger("amrvit")

SUBCOMMANDS = ("gen-data", "load-data", "pretrain", "finetune", "train-baseline", "evaluate",
               "export-embeddings", "report", "selfcheck")


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="amrvit", description="Semi-supervised ViT modulation classification")
    p.add_argument("command", choices=SUBCOMMANDS)
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--scenario", choices=("recon", "recon+contrastive", "contrastive"))
    p.add_argument("--label-fraction", type=float)
    p.add_argument("--seed", type=int, help="run only this seed instead of the config's seeds list")
    p.add_argument("--out", help="override output_dir")
    p.add_argument("--checkpoint", help="model checkpoint to read")
    p.add_argument("--freeze-encoder", type=_bool)
    p.add_argument("--model", choices=("cnn", "resnet", "vit"), help="baseline kind for train-baseline")
    p.add_argument("--runs", nargs="+", help="run directories for report")
    p.add_argument("--eval-name", default="finetune", help="evaluation subfolder read by report")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file plus flag overrides, validated as one document."""
    doc = load_config(args.config).model_dump(mode="json")
    tr = doc["training"]
    if args.scenario is not None:
        tr["scenario"] = args.scenario
    if args.label_fraction is not None:
        tr["label_fraction"] = args.label_fraction
    if args.seed is not None:
        tr["seeds"] = [args.seed]
    if args.freeze_encoder is not None:
        tr["freeze_encoder"] = args.freeze_encoder
    if args.out is not None:
        doc["output_dir"] = args.out
    return parse_config(doc)


def _seed_dir(cfg: RunConfig, seed: int) -> Path:
    d = Path(cfg.output_dir) / f"seed{seed}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _freeze(cfg: RunConfig, out_dir: Path, command: str, seed: int | None, extra: dict | None = None) -> None:
    doc = {"command": command, "seed": seed, "config": cfg.model_dump(mode="json"), **(extra or {})}
    (out_dir / f"{command}.config.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


def _dataset_path(cfg: RunConfig) -> Path:
    return Path(cfg.data.dataset_path) if cfg.data.dataset_path else Path(cfg.output_dir) / "dataset.bin"


def _synthesize(cfg: RunConfig) -> Dataset:
    d = cfg.data
    return build_synthetic_dataset(SyntheticConfig(
        schemes=tuple(d.schemes), snr_list_db=tuple(d.snr_list_db), frames_per_cell=d.frames_per_cell,
        frame_len=d.frame_len, samples_per_symbol=d.samples_per_symbol, seed=d.seed,
        max_freq_offset=d.max_freq_offset))


def _read_rml(cfg: RunConfig) -> Dataset:
    d = cfg.data
    if not d.rml_path:
        raise ConfigError("data.rml_path: required when data.source is 'rml'")
    return load_rml(d.rml_path, d.schemes, d.snr_min_db, d.snr_max_db, d.per_cell,
                    np.random.default_rng(d.seed), d.class_map_path, d.frame_len, d.decimate)


def dataset_for(cfg: RunConfig) -> Dataset:
    path = _dataset_path(cfg)
    if path.exists():
        return load_dataset(path)
    return _synthesize(cfg) if cfg.data.source == "synthetic" else _read_rml(cfg)


def _split(cfg: RunConfig, ds: Dataset, seed: int) -> Dataset:
    return split_dataset(ds, cfg.data.split, seed=seed)


def _checkpoint(args, default: Path) -> Path:
    path = Path(args.checkpoint) if args.checkpoint else default
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return path


# ---------------------------------------------------------------- subcommands


def cmd_gen_data(cfg: RunConfig, args) -> None:
    ds = _synthesize(cfg)
    _save(cfg, ds, "gen-data")


def cmd_load_data(cfg: RunConfig, args) -> None:
    ds = _read_rml(cfg)
    _save(cfg, ds, "load-data")


def _save(cfg: RunConfig, ds: Dataset, command: str) -> None:
    path = _dataset_path(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, path)
    _freeze(cfg, path.parent, command, cfg.data.seed, {"samples": len(ds)})
    print(f"wrote {len(ds)} frames to {path}")


def cmd_pretrain(cfg: RunConfig, args) -> None:
    base = dataset_for(cfg)
    policy = cfg.augmentation.policy()
    for seed in cfg.training.seeds:
        out = _seed_dir(cfg, seed)
        tcfg = cfg.training.train_config(seed, cfg.training.pretrain_epochs, policy)
        res = pretrain(_split(cfg, base, seed), cfg.training.scenario, tcfg, cfg.model.vit_config())
        save_model(out / "pretrain.ckpt", res.model, {"seed": seed, "scenario": cfg.training.scenario})
        write_history_csv(out / "pretrain_history.csv", res.history)
        _freeze(cfg, out, "pretrain", seed)
        print(f"seed {seed}: pretrain checkpoint {out / 'pretrain.ckpt'}")


def cmd_finetune(cfg: RunConfig, args) -> None:
    base = dataset_for(cfg)
    policy = cfg.augmentation.policy()
    vit_cfg = cfg.model.vit_config()
    for seed in cfg.training.seeds:
        out = _seed_dir(cfg, seed)
        ckpt = _checkpoint(args, out / "pretrain.ckpt")
        model, _ = load_model(ckpt, expected_vit=vit_cfg)
        ds = label_mask(_split(cfg, base, seed), cfg.training.label_fraction, seed=seed)
        tcfg = cfg.training.train_config(seed, cfg.training.finetune_epochs, policy)
        res = finetune(ds, model, tcfg, cfg.training.pseudo_config())
        save_model(out / "finetune.ckpt", res.model, {"seed": seed, "best_epoch": res.best_epoch})
        write_history_csv(out / "finetune_history.csv", res.history)
        _freeze(cfg, out, "finetune", seed, {"checkpoint": str(ckpt)})
        print(f"seed {seed}: best val acc {res.best_val_acc} at epoch {res.best_epoch}")


def cmd_train_baseline(cfg: RunConfig, args) -> None:
    kind = args.model or cfg.baseline.kind
    base = dataset_for(cfg)
    policy = cfg.augmentation.policy()
    model_cfg = {"cnn": cfg.baseline.cnn, "resnet": cfg.baseline.resnet}.get(kind, cfg.model.model_dump())
    for seed in cfg.training.seeds:
        out = _seed_dir(cfg, seed)
        ds = label_mask(_split(cfg, base, seed), cfg.training.label_fraction, seed=seed)
        tcfg = cfg.training.train_config(seed, cfg.baseline.epochs, policy)
        res = train_supervised(kind, ds, tcfg, model_cfg)
        save_model(out / f"{kind}.ckpt", res.model, {"seed": seed, "best_epoch": res.best_epoch})
        write_history_csv(out / f"{kind}_history.csv", res.history)
        _freeze(cfg, out, f"train-baseline-{kind}", seed)
        print(f"seed {seed}: {kind} best val acc {res.best_val_acc}")


def cmd_evaluate(cfg: RunConfig, args) -> None:
    base = dataset_for(cfg)
    for seed in cfg.training.seeds:
        out = _seed_dir(cfg, seed)
        ckpt = _checkpoint(args, out / "finetune.ckpt")
        model, meta = load_model(ckpt)
        part = _split(cfg, base, seed).part(cfg.evaluation.split)
        rec = evaluate(model, meta["model_kind"], part)
        eval_dir = out / "eval" / ckpt.stem
        write_metrics_csvs(rec, eval_dir)
        capped = per_snr_accuracy(model, part, cap=cfg.evaluation.snr_cap, seed=seed)
        with open(eval_dir / "per_snr_capped.csv", "w") as fh:
            fh.write("snr_db,count,accuracy\n")
            for s, v in capped.items():
                fh.write(f"{s},{v.count},{'' if v.accuracy is None else repr(v.accuracy)}\n")
        _freeze(cfg, eval_dir, "evaluate", seed, {"checkpoint": str(ckpt)})
        print(f"seed {seed}: {meta['model_kind']} accuracy {rec.overall:.4f} -> {eval_dir}")


def cmd_export_embeddings(cfg: RunConfig, args) -> None:
    base = dataset_for(cfg)
    for seed in cfg.training.seeds:
        out = _seed_dir(cfg, seed)
        ckpt = _checkpoint(args, out / "finetune.ckpt")
        model, meta = load_model(ckpt)
        if meta["model_kind"] != "vit":
            raise ConfigError(f"{ckpt}: embeddings need a ViT checkpoint, got {meta['model_kind']}")
        path = export_embeddings(model, _split(cfg, base, seed).part(cfg.evaluation.split), out / "embeddings.csv")
        _freeze(cfg, out, "export-embeddings", seed, {"checkpoint": str(ckpt)})
        print(f"seed {seed}: embeddings -> {path}")


def _run_dir(path: Path, eval_name: str) -> Path:
    if (path / "overall.csv").exists():
        return path
    return path / "eval" / eval_name


def cmd_report(cfg: RunConfig, args) -> None:
    root = Path(cfg.output_dir)
    dirs = [Path(r) for r in args.runs] if args.runs else [root / f"seed{s}" for s in cfg.training.seeds]
    runs = [_run_dir(d, args.eval_name) for d in dirs]
    out = root / "report"
    agg = write_report(runs, out)
    m, s, n = agg["overall"]
    print(f"{n} runs: overall accuracy {m:.4f} ± {s:.4f} -> {out}")


def cmd_selfcheck(cfg: RunConfig, args) -> int:
    ok, lines = run_selfcheck()
    for line in lines:
        print(line)
    print("selfcheck " + ("passed" if ok else "FAILED"))
    return 0 if ok else 1


HANDLERS = {
    "gen-data": cmd_gen_data, "load-data": cmd_load_data, "pretrain": cmd_pretrain, "finetune": cmd_finetune,
    "train-baseline": cmd_train_baseline, "evaluate": cmd_evaluate, "export-embeddings": cmd_export_embeddings,
    "report": cmd_report, "selfcheck": cmd_selfcheck,
}

_EXPECTED = (ConfigError, FileNotFoundError, InvalidArgumentError, MalformedLayoutError, UnknownClassError,
             InsufficientSamplesError, NonFiniteGradientError, AugmentationError, TrainingError, OSError)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    threads = os.environ.get("AMRVIT_THREADS")
    if threads:
        try:
            torch.set_num_threads(max(1, int(threads)))
        except ValueError:
            print(f"error: AMRVIT_THREADS must be an integer, got {threads!r}", file=sys.stderr)
            return 2
    try:
        cfg = resolve_config(args)
        rc = HANDLERS[args.command](cfg, args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except _EXPECTED as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
