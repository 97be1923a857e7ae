"""
Sweeps of the mock pipeline: quality threshold, number of rounds, scorer
variant, plus the quality-vs-confidence rank correlation.
"""
from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence

from .evaluation import TABLE_COLUMNS, TABLE_HEADERS, EvalReport, evaluate, spearman
from .formats import GTVideo, atomic_write_text, base_dataset_from_gt, gt_tracks
from .fusion import TrainingDataset
from .mock import NoiseConfig, generate_dump
from .pipeline import run_round
from .quality import QualityConfig, make_scorer, quality_diagnostics

THRESHOLD_GRID = (0.95, 0.85, 0.75, 0.5)
ROUND_GRID = (1, 2, 3)


def simulate(gt: Mapping[str, GTVideo], base: Mapping[str, GTVideo], config: QualityConfig,
             rounds: int, tau: float, scorer: str = "predicted", seed: int = 0,
             noise: Optional[NoiseConfig] = None) -> TrainingDataset:
    """Run ``rounds`` rounds, each on a fresh mock dump (seed ``seed + k``)."""
    noise = noise or NoiseConfig()
    dataset = base_dataset_from_gt(base)
    scorer_obj = make_scorer(scorer, gt_tracks(gt))
    for k in range(rounds):
        dump = generate_dump(gt, replace(noise, seed=seed + k))
        dataset = run_round(dataset, dump, config, scorer_obj, tau=tau).dataset
    return dataset


def evaluate_pseudo_labels(dataset: TrainingDataset, gt: Mapping[str, GTVideo]) -> EvalReport:
    preds = {v: dataset.videos[v].detections for v in dataset.pseudo_videos() if v in gt}
    return evaluate(preds, gt_tracks(gt))


def format_table(first_header: str, rows: Sequence[tuple]) -> str:
    def fmt(v):
        return "-" if v is None else f"{100 * v:.1f}"
    header = (first_header,) + TABLE_HEADERS
    body = [(str(label),) + tuple(fmt(rep.metrics()[k]) for k in TABLE_COLUMNS)
            for label, rep in rows]
    width = max(len(r[0]) for r in [header] + body)
    return "\n".join(r[0].ljust(width) + "".join(c.rjust(7) for c in r[1:])
                     for r in [header] + body) + "\n"


def correlation_summary(gt: Mapping[str, GTVideo], seed: int = 0,
                        noise: Optional[NoiseConfig] = None) -> Dict[str, Optional[float]]:
    noise = replace(noise or NoiseConfig(), seed=seed)
    dump = generate_dump(gt, noise)
    rows = []
    for vid, dets in dump.items():
        rows.extend(quality_diagnostics(list(dets), gt[vid].tracks))
    q, s, iou = zip(*rows) if rows else ((), (), ())
    if len(rows) < 2:
        return {"quality": None, "confidence": None, "frames": len(rows)}
    return {"quality": spearman(q, iou), "confidence": spearman(s, iou), "frames": len(rows)}


def run_report(gt: Mapping[str, GTVideo], base: Mapping[str, GTVideo], config: QualityConfig,
               out_dir: Path, seed: int = 0, plot: bool = False) -> str:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = {}

    tau_rows = []
    for tau in THRESHOLD_GRID:
        ds = simulate(gt, base, config, config.rounds, tau, seed=seed)
        tau_rows.append((f"{tau:.2f}", evaluate_pseudo_labels(ds, gt)))
    round_rows = []
    for r in ROUND_GRID:
        ds = simulate(gt, base, config, r, config.tau_th, seed=seed)
        round_rows.append((f"{r} round{'s' if r > 1 else ''}", evaluate_pseudo_labels(ds, gt)))
    scorer_rows = [
        ("confidence only", evaluate_pseudo_labels(
            simulate(gt, base, config, config.rounds, config.tau_confidence_only,
                     scorer="confidence", seed=seed), gt)),
        ("predicted IoU", evaluate_pseudo_labels(
            simulate(gt, base, config, config.rounds, config.tau_th, seed=seed), gt)),
    ]
    corr = correlation_summary(gt, seed=seed)

    text = ("quality threshold sweep\n" + format_table("tau_th", tau_rows) + "\n"
            + "round sweep\n" + format_table("rounds", round_rows) + "\n"
            + "scorer ablation\n" + format_table("scorer", scorer_rows) + "\n"
            + "spearman vs true frame IoU: quality {} / confidence {} ({} frames)\n".format(
                _fmt_rho(corr["quality"]), _fmt_rho(corr["confidence"]), corr["frames"]))
    results["threshold_sweep"] = {label: rep.metrics() for label, rep in tau_rows}
    results["round_sweep"] = {label: rep.metrics() for label, rep in round_rows}
    results["scorer_ablation"] = {label: rep.metrics() for label, rep in scorer_rows}
    results["spearman"] = corr
    results["config"] = config.to_dict()
    results["seed"] = seed
    atomic_write_text(out_dir / "report.json", json.dumps(results, indent=2, sort_keys=True) + "\n")
    atomic_write_text(out_dir / "report.txt", text)
    if plot:
        _plot(tau_rows, round_rows, out_dir)
    return text


def _fmt_rho(v):
    return "undefined" if v is None else f"{v:.3f}"


def _plot(tau_rows, round_rows, out_dir: Path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, rows, xlabel in ((axes[0], tau_rows, "tau_th"), (axes[1], round_rows, "rounds")):
        labels = [label for label, _ in rows]
        for key in ("ap50", "ap75", "ap"):
            ax.plot(labels, [100 * (rep.metrics()[key] or 0.0) for _, rep in rows],
                    marker="o", label=key.upper())
        ax.set_xlabel(xlabel)
        ax.set_ylabel("pseudo-label AP (%)")
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_dir / "sweeps.png", dpi=120)
    plt.close(fig)
