"""
Per-video detection sets: confidence filtering, ordering and spatiotemporal
non-maximum suppression over mask tracks.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

from .masks import MaskTrack, any_frame_overlap


@dataclass(frozen=True)
class DetectionTrack:
    """One instance hypothesis in one video.

    ``selected`` is ``None`` until the quality gate has run; afterwards it
    holds one 0/1 flag per frame.
    """
    detection_id: str
    video_id: str
    score: float
    masks: MaskTrack
    pred_iou: Optional[Tuple[float, ...]] = None
    selected: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "masks", tuple(self.masks))
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"{self.detection_id}: score {self.score} outside [0, 1]")
        n = len(self.masks)
        if self.pred_iou is not None:
            pred = tuple(float(v) for v in self.pred_iou)
            if len(pred) != n:
                raise ValueError(f"{self.detection_id}: pred_iou length {len(pred)} != {n}")
            if any(not 0.0 <= v <= 1.0 for v in pred):
                raise ValueError(f"{self.detection_id}: pred_iou outside [0, 1]")
            object.__setattr__(self, "pred_iou", pred)
        if self.selected is not None:
            sel = tuple(int(bool(v)) for v in self.selected)
            if len(sel) != n:
                raise ValueError(f"{self.detection_id}: selected length {len(sel)} != {n}")
            object.__setattr__(self, "selected", sel)

    @property
    def num_frames(self) -> int:
        return len(self.masks)

    def with_selection(self, selected: Sequence[int]) -> "DetectionTrack":
        return replace(self, selected=tuple(selected))


@dataclass
class DetectionSet:
    video_id: str
    detections: List[DetectionTrack] = field(default_factory=list)

    def __post_init__(self):
        self.detections = list(self.detections)
        lengths = {d.num_frames for d in self.detections}
        if len(lengths) > 1:
            raise ValueError(f"video {self.video_id}: inconsistent track lengths {sorted(lengths)}")
        for d in self.detections:
            if d.video_id != self.video_id:
                raise ValueError(
                    f"detection {d.detection_id} belongs to {d.video_id}, not {self.video_id}")

    def __len__(self):
        return len(self.detections)

    def __iter__(self):
        return iter(self.detections)

    def _derive(self, dets) -> "DetectionSet":
        return DetectionSet(self.video_id, list(dets))


def confidence_filter(dets: DetectionSet, min_score: float,
                      exclusive: bool = False) -> DetectionSet:
    """Keep detections scoring at least ``min_score`` (strictly above it when
    ``exclusive``), preserving order."""
    if exclusive:
        return dets._derive(d for d in dets if d.score > min_score)
    return dets._derive(d for d in dets if d.score >= min_score)


def _sort_key(d: DetectionTrack):
    return (-d.score, d.detection_id)


def sort_by_confidence(dets: DetectionSet) -> DetectionSet:
    return dets._derive(sorted(dets, key=_sort_key))


def spatiotemporal_nms(dets: DetectionSet, iou_thresh: float = 0.5) -> DetectionSet:
    """Greedy suppression in score order.

    A detection survives iff no already-kept detection reaches
    ``iou_thresh`` mask IoU with it in at least one frame.
    """
    if not 0.0 < iou_thresh <= 1.0:
        raise ValueError(f"iou_thresh must be in (0, 1], got {iou_thresh}")
    kept: List[DetectionTrack] = []
    for d in sort_by_confidence(dets):
        if not any(any_frame_overlap(k.masks, d.masks, iou_thresh) for k in kept):
            kept.append(d)
    return dets._derive(kept)
