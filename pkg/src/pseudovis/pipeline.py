"""
One self-training round over a detection dump, in process:

    filter -> sort + spatiotemporal NMS -> quality / selection -> retain -> augment
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Tuple

from .fusion import FusionOutcome, TrainingDataset, augment
from .nms import DetectionSet, confidence_filter, spatiotemporal_nms
from .quality import QualityConfig, Scorer, apply_selection, retain

COUNT_KEYS = ("raw", "filtered", "post_nms", "retained", "fused",
              "inserted_new_track", "new_videos", "new_video_detections")


@dataclass
class RoundResult:
    dataset: TrainingDataset
    counts: Dict[str, int]
    retained: Dict[str, DetectionSet]
    outcomes: List[FusionOutcome] = field(default_factory=list)


def select_pseudo_labels(dump: Mapping[str, DetectionSet], config: QualityConfig,
                         scorer: Scorer, tau: float) -> Tuple[Dict[str, DetectionSet], Dict[str, int]]:
    counts = dict.fromkeys(COUNT_KEYS, 0)
    retained = {}
    for vid in sorted(dump):
        dets = dump[vid]
        counts["raw"] += len(dets)
        dets = confidence_filter(dets, config.conf_floor, exclusive=config.conf_floor_exclusive)
        counts["filtered"] += len(dets)
        dets = spatiotemporal_nms(dets, config.nms_iou)
        counts["post_nms"] += len(dets)
        dets = retain(apply_selection(dets, scorer, tau))
        counts["retained"] += len(dets)
        if len(dets):
            retained[vid] = dets
    return retained, counts


def run_round(dataset: TrainingDataset, dump: Mapping[str, DetectionSet],
              config: QualityConfig, scorer: Scorer, tau: float = None) -> RoundResult:
    """Execute one round and return the next dataset with stage counts."""
    tau = config.tau_th if tau is None else tau
    retained, counts = select_pseudo_labels(dump, config, scorer, tau)
    new_ds, outcomes = augment(dataset, retained)
    for o in outcomes:
        if o.kind == "fused":
            counts["fused"] += 1
        elif o.kind == "inserted_new_track":
            counts["inserted_new_track"] += 1
        else:
            counts["new_video_detections"] += 1
    counts["new_videos"] = sum(1 for v in retained if v not in dataset.videos)
    return RoundResult(new_ds, counts, retained, outcomes)
