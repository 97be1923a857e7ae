"""
Command-line driver.

Exit codes: 2 schema/parse error, 3 state checksum mismatch, 4 I/O failure,
5 nothing eligible to sample.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path

import click
import yaml

from . import __version__
from .droploss import audit
from .evaluation import MissingVideo, class_agnostic_remap, evaluate, spearman
from .formats import (
    ChecksumMismatch,
    SchemaError,
    atomic_write_text,
    base_dataset_from_gt,
    dump_detections,
    gt_tracks,
    load_detections,
    load_state,
    parse_ytvis,
    save_state,
    state_lock,
    to_ytvis,
)
from .fusion import DuplicateDetectionError, TrainingDataset
from .mock import NoiseConfig, generate_dump, synthesize_videos
from .pipeline import run_round
from .quality import QualityConfig, make_scorer
from .sampler import NoEligibleVideos, sample_stream


LOG_ENV = "PSEUDOVIS_LOG_LEVEL"


class _Cli(click.Group):
    """Maps pipeline exceptions onto the documented exit codes."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except (SchemaError, MissingVideo, DuplicateDetectionError) as exc:
            click.echo(f"error: {exc}", err=True)
            raise click.exceptions.Exit(2)
        except ChecksumMismatch as exc:
            click.echo(f"error: {exc}", err=True)
            raise click.exceptions.Exit(3)
        except NoEligibleVideos as exc:
            click.echo(f"error: {exc}", err=True)
            raise click.exceptions.Exit(5)
        except OSError as exc:
            click.echo(f"error: {exc}", err=True)
            raise click.exceptions.Exit(4)


@click.group(cls=_Cli)
@click.version_option(__version__)
def main():
    """Quality-guided pseudo-label curation for video instance segmentation."""
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_config_file(path) -> dict:
    if not path:
        return {}
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except yaml.YAMLError as exc:
        raise SchemaError(f"{path}: {exc}") from None
    if not isinstance(raw, dict):
        raise SchemaError(f"{path}: config must be a mapping")
    extra = set(raw) - set(QualityConfig.__dataclass_fields__) - {"scorer"}
    if extra:
        raise SchemaError(f"{path}: unknown config keys {sorted(extra)}")
    return raw


def _load_config(path, **overrides):
    """Config file values overridden by explicitly given flags.

    Returns the config and the raw file mapping.
    """
    raw = _read_config_file(path)
    values = {k: v for k, v in raw.items() if k != "scorer"}
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return QualityConfig(**values), raw
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"invalid config: {exc}") from None


def _write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


config_option = click.option("--config", "config_path", type=click.Path(dir_okay=False),
                             help="YAML/JSON file with config defaults.")


@main.command("init")
@click.option("--state", "state_path", required=True, type=click.Path(dir_okay=False))
@click.option("--base", "base_path", type=click.Path(exists=True, dir_okay=False),
              help="YouTubeVIS-format file of labelled synthetic videos.")
@click.option("--force", is_flag=True, help="Overwrite an existing state file.")
def init_cmd(state_path, base_path, force):
    """Create the round-0 training store."""
    if Path(state_path).exists() and not force:
        raise click.UsageError(f"{state_path} exists; use --force to overwrite")
    ds = base_dataset_from_gt(parse_ytvis(_read_json(base_path))) if base_path else TrainingDataset()
    with state_lock(state_path):
        checksum = save_state(state_path, ds)
    click.echo(f"round 0: {len(ds.videos)} base videos, checksum {checksum[:12]}")


@main.command("round")
@click.option("--state", "state_path", required=True, type=click.Path(dir_okay=False))
@click.option("--dump", "dump_path", required=True, type=click.Path(dir_okay=False))
@click.option("--manifest", "manifest_path", type=click.Path(dir_okay=False),
              help="Defaults to manifest_round<k>.json next to the state file.")
@config_option
@click.option("--init", "init_missing", is_flag=True,
              help="Start from an empty round-0 store if the state file is missing.")
@click.option("--conf-floor", type=float)
@click.option("--conf-floor-exclusive", is_flag=True, default=None,
              help="Keep only scores strictly above the floor.")
@click.option("--nms-iou", type=float)
@click.option("--tau", "tau_th", type=float, help="Quality threshold.")
@click.option("--rounds", type=int, help="Planned number of rounds (recorded).")
@click.option("--scorer", type=click.Choice(["predicted", "confidence", "oracle"]))
@click.option("--gt", "gt_path", type=click.Path(dir_okay=False),
              help="Ground truth, required by the oracle scorer.")
@click.option("--no-reset", is_flag=True, help="Do not ask the trainer to reset weights.")
def round_cmd(state_path, dump_path, manifest_path, config_path, init_missing, conf_floor,
              conf_floor_exclusive, nms_iou, tau_th, rounds, scorer, gt_path, no_reset):
    """Run one self-training round over a detection dump."""
    config, raw = _load_config(config_path, conf_floor=conf_floor,
                               conf_floor_exclusive=conf_floor_exclusive,
                               nms_iou=nms_iou, tau_th=tau_th, rounds=rounds)
    scorer_name = scorer or raw.get("scorer", "predicted")
    if scorer_name not in ("predicted", "confidence", "oracle"):
        raise SchemaError(f"unknown scorer {scorer_name!r}")
    # the confidence-only ablation has its own default threshold
    if scorer_name == "confidence" and tau_th is None and "tau_th" not in raw:
        tau = config.tau_confidence_only
    else:
        tau = config.tau_th
    gts = gt_tracks(parse_ytvis(_read_json(gt_path))) if gt_path else None
    if scorer_name == "oracle" and gts is None:
        raise click.UsageError("--scorer oracle needs --gt")
    scorer_obj = make_scorer(scorer_name, gts)

    with state_lock(state_path):
        if not Path(state_path).exists():
            if not init_missing:
                raise FileNotFoundError(f"state file {state_path} not found (use --init)")
            dataset = TrainingDataset()
            prev_checksum = None
        else:
            dataset = load_state(state_path)
            prev_checksum = json.loads(Path(state_path).read_text())["checksum"]
        dump = load_detections(dump_path)
        result = run_round(dataset, dump, config, scorer_obj, tau=tau)
        checksum = save_state(state_path, result.dataset)

    k = result.dataset.round
    manifest = {
        "round": k,
        "dump": {"name": Path(dump_path).name, "sha256": _sha256(dump_path)},
        "counts": result.counts,
        "config": dict(config.to_dict(), scorer=scorer_name, tau_effective=tau),
        "reset_directive": not no_reset,
        "state_checksum": checksum,
        "previous_state_checksum": prev_checksum,
        "num_videos": len(result.dataset.videos),
        "num_pseudo_videos": len(result.dataset.pseudo_videos()),
    }
    if manifest_path is None:
        manifest_path = Path(state_path).parent / f"manifest_round{k:02d}.json"
    _write_json(manifest_path, manifest)
    c = result.counts
    click.echo(f"round {k}: raw {c['raw']} -> filtered {c['filtered']} -> nms {c['post_nms']}"
               f" -> retained {c['retained']} ({c['fused']} fused, {c['inserted_new_track']} new"
               f" tracks, {c['new_videos']} new videos)")


@main.command("sample")
@click.option("--state", "state_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--n-batches", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def sample_cmd(state_path, n_batches, seed, out_path):
    """Emit a stream of sample plans (JSON lines) for an external trainer."""
    dataset = load_state(state_path)
    plans = sample_stream(dataset, n_batches, seed)
    lines = [json.dumps(dict(p.to_dict(), batch=i), sort_keys=True) for i, p in enumerate(plans)]
    atomic_write_text(out_path, "".join(line + "\n" for line in lines))
    n_pseudo = sum(p.source == "pseudo" for p in plans)
    click.echo(f"{len(plans)} batches, {n_pseudo} from pseudo-labelled videos")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from None


def _read_pairs(path):
    xs, ys = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            xs.append(float(rec["quality"]))
            ys.append(float(rec["true_iou"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            raise SchemaError(f"{path}:{lineno}: expected {{'quality', 'true_iou'}}") from None
    return xs, ys


def pseudo_predictions(dataset: TrainingDataset, video_ids=None):
    preds = {}
    for vid in dataset.pseudo_videos():
        if video_ids is not None and vid not in video_ids:
            continue
        preds[vid] = dataset.videos[vid].detections
    return preds


@main.command("eval")
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--preds", "preds_path", type=click.Path(exists=True, dir_okay=False),
              help="Detections file.")
@click.option("--state", "state_path", type=click.Path(exists=True, dir_okay=False),
              help="Evaluate the pseudo-labels stored in a round-state file instead.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--table", "table_path", type=click.Path(dir_okay=False))
@click.option("--spearman", "q_path", type=click.Path(exists=True, dir_okay=False),
              help="JSON lines of {quality, true_iou} pairs.")
def eval_cmd(gt_path, preds_path, state_path, out_path, table_path, q_path):
    """Class-agnostic AP/AR of predictions against ground truth."""
    if (preds_path is None) == (state_path is None):
        raise click.UsageError("give exactly one of --preds / --state")
    gt = parse_ytvis(class_agnostic_remap(_read_json(gt_path)))
    if preds_path:
        preds = {vid: list(s) for vid, s in load_detections(preds_path).items()}
    else:
        preds = pseudo_predictions(load_state(state_path), set(gt))
    report = evaluate(preds, gt_tracks(gt))
    if q_path:
        report.spearman_rho = spearman(*_read_pairs(q_path))
    _write_json(out_path, report.to_dict())
    table = report.table(Path(preds_path or state_path).stem)
    if table_path:
        atomic_write_text(table_path, table)
    click.echo(table, nl=False)


@main.command("mock-dump")
@click.option("--gt", "gt_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_path", type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--target-iou", nargs=2, type=float, default=(0.55, 0.98), show_default=True)
@click.option("--fp-rate", type=float, default=1.0, show_default=True)
@click.option("--miss-rate", type=float, default=0.1, show_default=True)
@click.option("--iou-noise", type=float, default=0.05, show_default=True)
@click.option("--score-noise", type=float, default=0.15, show_default=True)
@click.option("--duplicate-rate", type=float, default=0.3, show_default=True)
@click.option("--synthesize", type=int, help="Write N synthetic videos to --gt first.")
@click.option("--frames", type=int, default=10, show_default=True)
@click.option("--height", type=int, default=64, show_default=True)
@click.option("--width", type=int, default=64, show_default=True)
@click.option("--prefix", default="vid", show_default=True, help="Synthetic video id prefix.")
@click.option("--gt-seed", type=int, default=0, show_default=True)
def mock_dump_cmd(gt_path, out_path, seed, target_iou, fp_rate, miss_rate, iou_noise,
                  score_noise, duplicate_rate, synthesize, frames, height, width, prefix,
                  gt_seed):
    """Write a simulated detections file from ground truth."""
    if synthesize:
        videos = synthesize_videos(synthesize, frames, height, width, gt_seed, prefix=prefix)
        atomic_write_text(gt_path, json.dumps(to_ytvis(videos), sort_keys=True) + "\n")
    else:
        videos = parse_ytvis(_read_json(gt_path))
    if out_path is None:
        return
    try:
        cfg = NoiseConfig(tuple(target_iou), fp_rate, miss_rate, iou_noise, score_noise,
                          duplicate_rate, seed=seed)
    except ValueError as exc:
        raise click.BadParameter(str(exc))
    dump = generate_dump(videos, cfg)
    atomic_write_text(out_path, dump_detections(dump))
    click.echo(f"{sum(len(s) for s in dump.values())} detections over {len(dump)} videos")


@main.command("droploss-audit")
@click.option("--dump", "dump_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--tau-iou", type=float, default=0.01, show_default=True)
@click.option("--per-frame", is_flag=True, help="Gate each frame separately.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), help="JSON lines of records.")
def droploss_audit_cmd(dump_path, gt_path, tau_iou, per_frame, out_path):
    """Print which predictions the loss gate would drop."""
    gt = parse_ytvis(_read_json(gt_path))
    dump = load_detections(dump_path)
    rows = []
    for vid in sorted(dump):
        if vid not in gt:
            raise MissingVideo(f"video {vid} not in ground truth")
        gv = gt[vid]
        recs = audit([(d.detection_id, d.masks) for d in dump[vid]], gv.tracks,
                     (gv.height, gv.width), tau_iou=tau_iou, per_frame=per_frame)
        rows.extend((vid, r) for r in recs)
    click.echo(f"{'video':<12}{'prediction':<28}{'max_iou':>9}{'vanilla':>10}{'gated':>10}")
    for vid, r in rows:
        click.echo(f"{vid:<12}{r.prediction_id:<28}{r.max_gt_iou:>9.4f}"
                   f"{r.vanilla_loss:>10.4f}{r.gated_loss:>10.4f}")
    dropped = sum(1 for _, r in rows if r.gated_loss == 0 and r.vanilla_loss > 0)
    click.echo(f"{dropped} of {len(rows)} losses dropped at tau_iou={tau_iou}")
    if out_path:
        atomic_write_text(out_path, "".join(
            json.dumps({"video_id": vid, "prediction_id": r.prediction_id,
                        "max_gt_iou": r.max_gt_iou, "vanilla_loss": r.vanilla_loss,
                        "gated_loss": r.gated_loss}, sort_keys=True) + "\n"
            for vid, r in rows))


@main.command("report")
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--base", "base_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
@config_option
@click.option("--plot", is_flag=True, help="Also write PNG plots (needs matplotlib).")
def report_cmd(gt_path, base_path, out_dir, seed, config_path, plot):
    """Threshold, round and scorer sweeps of the mock pipeline."""
    from .report import run_report

    config, _ = _load_config(config_path)
    gt = parse_ytvis(_read_json(gt_path))
    base = parse_ytvis(_read_json(base_path)) if base_path else {}
    text = run_report(gt, base, config, Path(out_dir), seed=seed, plot=plot)
    click.echo(text, nl=False)


if __name__ == "__main__":
    main()
