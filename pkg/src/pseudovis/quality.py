"""
Quality scoring, per-frame selection and retention of pseudo-labels.

The quality of detection ``d`` in frame ``t`` is its confidence times a
per-frame IoU estimate; frames at or above the threshold are selected and a
detection with no selected frame is dropped.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, Mapping, Optional, Sequence, Tuple

from .masks import MaskTrack, frame_iou, track_iou
from .nms import DetectionSet, DetectionTrack


@dataclass(frozen=True)
class QualityConfig:
    tau_th: float = 0.75
    conf_floor: float = 0.25
    nms_iou: float = 0.5
    drop_iou: float = 0.01
    rounds: int = 2
    # threshold used by the confidence-only ablation when tau_th is not given
    tau_confidence_only: float = 0.85
    conf_floor_exclusive: bool = False

    def __post_init__(self):
        for name in ("tau_th", "conf_floor", "nms_iou", "drop_iou", "tau_confidence_only"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


class MissingGroundTruth(KeyError):
    pass


class Scorer:
    """Produces the per-frame IoU estimate multiplied into the quality."""
    name = "abstract"

    def frame_values(self, det: DetectionTrack) -> Tuple[float, ...]:
        raise NotImplementedError


class PredictedIoUScorer(Scorer):
    """Reads the predicted IoU stored with the detection.

    Detections without stored values fall back to 1.0 per frame, which is the
    confidence-only behaviour.
    """
    name = "predicted"

    def frame_values(self, det):
        if det.pred_iou is None:
            return (1.0,) * det.num_frames
        return det.pred_iou


class ConfidenceOnlyScorer(Scorer):
    name = "confidence"

    def frame_values(self, det):
        return (1.0,) * det.num_frames


def true_frame_ious(pred: MaskTrack, gt: MaskTrack) -> List[float]:
    """Per-frame IoU against ground truth; a frame where both are empty is a
    correct (empty) label and counts as 1."""
    out = []
    for p, g in zip(pred, gt):
        v = frame_iou(p, g)
        out.append(1.0 if v is None else v)
    return out


def match_ground_truth(pred: MaskTrack, gts: Sequence[MaskTrack]) -> Optional[int]:
    """Index of the ground-truth track with the highest track IoU (first on
    ties), or ``None`` for an empty list."""
    best, best_iou = None, -1.0
    for i, gt in enumerate(gts):
        v = track_iou(pred, gt)
        if v > best_iou:
            best, best_iou = i, v
    return best


class OracleIoUScorer(Scorer):
    """True frame IoU against the best-matching ground-truth track.

    Test and diagnostic use only. With no ground-truth track in the video the
    prediction is matched against an all-empty track.
    """
    name = "oracle"

    def __init__(self, gt_tracks: Mapping[str, Sequence[MaskTrack]]):
        self.gt_tracks = gt_tracks

    def frame_values(self, det):
        if det.video_id not in self.gt_tracks:
            raise MissingGroundTruth(det.video_id)
        gts = self.gt_tracks[det.video_id]
        idx = match_ground_truth(det.masks, gts)
        gt = gts[idx] if idx is not None else (None,) * det.num_frames
        return tuple(true_frame_ious(det.masks, gt))


def make_scorer(name: str, gt_tracks=None) -> Scorer:
    if name == "predicted":
        return PredictedIoUScorer()
    if name == "confidence":
        return ConfidenceOnlyScorer()
    if name == "oracle":
        if gt_tracks is None:
            raise MissingGroundTruth("oracle scorer needs ground truth")
        return OracleIoUScorer(gt_tracks)
    raise ValueError(f"unknown scorer {name!r}")


def quality_scores(det: DetectionTrack, scorer: Scorer) -> Tuple[float, ...]:
    return tuple(det.score * v for v in scorer.frame_values(det))


def select_frames(q: Sequence[float], tau: float) -> Tuple[int, ...]:
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau={tau} outside [0, 1]")
    return tuple(1 if v >= tau else 0 for v in q)


def apply_selection(dets: DetectionSet, scorer: Scorer, tau: float) -> DetectionSet:
    """Populate the selection flags of every detection in the set."""
    return dets._derive(
        d.with_selection(select_frames(quality_scores(d, scorer), tau)) for d in dets)


class SelectionUnset(ValueError):
    pass


def retain(dets: DetectionSet) -> DetectionSet:
    out = []
    for d in dets:
        if d.selected is None:
            raise SelectionUnset(f"detection {d.detection_id} has no selection flags")
        if sum(d.selected) > 0:
            out.append(d)
    return dets._derive(out)


def quality_diagnostics(dets: Sequence[DetectionTrack], gts: Sequence[MaskTrack],
                        scorer: Scorer = None) -> List[Tuple[float, float, float]]:
    """``(quality, confidence, true IoU)`` for every informative frame.

    Frames where both the prediction and its matched ground truth are empty
    are skipped. Used for rank-correlation diagnostics.
    """
    scorer = scorer or PredictedIoUScorer()
    rows = []
    for d in dets:
        idx = match_ground_truth(d.masks, gts)
        gt = gts[idx] if idx is not None else (None,) * d.num_frames
        q = quality_scores(d, scorer)
        for t, (p, g) in enumerate(zip(d.masks, gt)):
            v = frame_iou(p, g)
            if v is not None:
                rows.append((q[t], d.score, v))
    return rows
