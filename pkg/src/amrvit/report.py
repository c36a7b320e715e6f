"""Aggregate evaluation outputs of several runs into tables and an accuracy-vs-SNR chart."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from amrvit.errors import InvalidArgumentError


def _read_csv(path: Path) -> list[dict]:
    if not path.exists():
        raise FileNotFoundError(f"missing evaluation output {path}")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def load_run(run_dir: str | Path) -> dict:
    d = Path(run_dir)
    overall = _read_csv(d / "overall.csv")[0]
    per_class = {int(r["class_id"]): (r["class_name"], float(r["accuracy"]) if r["accuracy"] else math.nan)
                 for r in _read_csv(d / "per_class.csv")}
    per_snr = {int(r["snr_db"]): float(r["accuracy"]) for r in _read_csv(d / "per_snr.csv")}
    return {"dir": str(d), "model_kind": overall["model_kind"], "overall": float(overall["overall_accuracy"]),
            "per_class": per_class, "per_snr": per_snr}


def _mean_std(vals: list[float]) -> tuple[float, float, int]:
    a = np.asarray([v for v in vals if not math.isnan(v)], dtype=np.float64)
    if a.size == 0:
        return math.nan, math.nan, 0
    return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0, int(a.size)


def aggregate(runs: list[dict]) -> dict:
    """Mean and sample standard deviation across runs for every metric."""
    if not runs:
        raise InvalidArgumentError("no runs to aggregate")
    snrs = sorted({s for r in runs for s in r["per_snr"]})
    classes = sorted({k for r in runs for k in r["per_class"]})
    return {
        "n_runs": len(runs),
        "model_kinds": sorted({r["model_kind"] for r in runs}),
        "overall": _mean_std([r["overall"] for r in runs]),
        "per_snr": {s: _mean_std([r["per_snr"].get(s, math.nan) for r in runs]) for s in snrs},
        "per_class": {k: (runs[0]["per_class"][k][0],
                          _mean_std([r["per_class"].get(k, ("", math.nan))[1] for r in runs])) for k in classes},
    }


def _fmt(ms: tuple[float, float, int]) -> str:
    m, s, n = ms
    return "n/a" if n == 0 else f"{m:.4f} ± {s:.4f}"


def snr_chart_svg(per_snr: dict[int, tuple[float, float, int]], title: str = "Accuracy vs SNR",
                  width: int = 560, height: int = 360) -> str:
    """Line chart with error bars (mean ± std) on a fixed 0..1 accuracy axis."""
    pts = [(s, m, sd) for s, (m, sd, n) in sorted(per_snr.items()) if n > 0]
    left, right, top, bottom = 60, 20, 40, 50
    pw, ph = width - left - right, height - top - bottom
    smin = min((p[0] for p in pts), default=0)
    smax = max((p[0] for p in pts), default=1)
    span = (smax - smin) or 1

    def px(s):
        return left + (s - smin) / span * pw

    def py(a):
        return top + (1.0 - min(max(a, 0.0), 1.0)) * ph

    el = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
          f'font-family="sans-serif" font-size="12">',
          f'<rect width="{width}" height="{height}" fill="white"/>',
          f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="15">{title}</text>']
    for k in range(6):
        a = k / 5
        el.append(f'<line x1="{left}" y1="{py(a):.1f}" x2="{left + pw}" y2="{py(a):.1f}" stroke="#ddd"/>')
        el.append(f'<text x="{left - 8}" y="{py(a) + 4:.1f}" text-anchor="end">{a:.1f}</text>')
    for s, _, _ in pts:
        el.append(f'<text x="{px(s):.1f}" y="{top + ph + 18}" text-anchor="middle">{s}</text>')
    el.append(f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>')
    el.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>')
    el.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">SNR (dB)</text>')
    el.append(f'<text transform="translate(16,{top + ph / 2}) rotate(-90)" text-anchor="middle">accuracy</text>')
    if pts:
        line = " ".join(f"{px(s):.1f},{py(m):.1f}" for s, m, _ in pts)
        el.append(f'<polyline points="{line}" fill="none" stroke="#1f77b4" stroke-width="2"/>')
        for s, m, sd in pts:
            el.append(f'<line x1="{px(s):.1f}" y1="{py(m - sd):.1f}" x2="{px(s):.1f}" y2="{py(m + sd):.1f}" '
                      f'stroke="#1f77b4"/>')
            el.append(f'<circle cx="{px(s):.1f}" cy="{py(m):.1f}" r="3" fill="#1f77b4"/>')
    el.append("</svg>")
    return "\n".join(el) + "\n"


def write_report(run_dirs: list[str | Path], out_dir: str | Path) -> dict:
    """``summary.csv``, ``report.md`` and ``accuracy_vs_snr.svg`` under ``out_dir``."""
    agg = aggregate([load_run(d) for d in run_dirs])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "key", "mean", "std", "n"])
        w.writerow(["overall", "", *agg["overall"]])
        for s, ms in agg["per_snr"].items():
            w.writerow(["snr_db", s, *ms])
        for k, (name, ms) in agg["per_class"].items():
            w.writerow(["class", name, *ms])
    md = [f"# Evaluation summary ({agg['n_runs']} runs, model: {', '.join(agg['model_kinds'])})", "",
          f"Overall accuracy: {_fmt(agg['overall'])}", "", "| SNR (dB) | accuracy |", "|---|---|"]
    md += [f"| {s} | {_fmt(ms)} |" for s, ms in agg["per_snr"].items()]
    md += ["", "| class | accuracy |", "|---|---|"]
    md += [f"| {name} | {_fmt(ms)} |" for name, ms in agg["per_class"].values() if ms[2] > 0]
    md += ["", "![accuracy vs SNR](accuracy_vs_snr.svg)", ""]
    (out / "report.md").write_text("\n".join(md))
    (out / "accuracy_vs_snr.svg").write_text(snr_chart_svg(agg["per_snr"]))
    return agg
