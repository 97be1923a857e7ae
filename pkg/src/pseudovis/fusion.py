"""
Multi-round training-set store and the augmentation protocol.

Retained detections of a video that is not yet in the store are inserted as
they are. For a video already present, each new detection is folded into the
existing list: if it overlaps an existing track in some frame (IoU >= 0.5)
the two are fused frame by frame, otherwise it is appended.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Tuple

from .masks import any_frame_overlap, best_frame_iou
from .nms import DetectionSet, DetectionTrack

BASE = "base"
PSEUDO = "pseudo"

PHI_IOU = 0.5


class DuplicateDetectionError(ValueError):
    pass


@dataclass
class VideoEntry:
    video_id: str
    num_frames: int
    provenance: str
    detections: List[DetectionTrack] = field(default_factory=list)
    # detection_id -> round in which the track entered the store
    origin_round: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.provenance not in (BASE, PSEUDO):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        ids = [d.detection_id for d in self.detections]
        if len(set(ids)) != len(ids):
            raise DuplicateDetectionError(f"video {self.video_id}: duplicate detection ids")
        for d in self.detections:
            if d.num_frames != self.num_frames:
                raise ValueError(
                    f"video {self.video_id}: track {d.detection_id} has "
                    f"{d.num_frames} frames, expected {self.num_frames}")

    def copy(self) -> "VideoEntry":
        return replace(self, detections=list(self.detections),
                       origin_round=dict(self.origin_round))


@dataclass
class TrainingDataset:
    round: int = 0
    videos: Dict[str, VideoEntry] = field(default_factory=dict)

    def pseudo_videos(self) -> List[str]:
        return [v for v, e in sorted(self.videos.items()) if e.provenance == PSEUDO]

    def base_videos(self) -> List[str]:
        return [v for v, e in sorted(self.videos.items()) if e.provenance == BASE]

    def num_tracks(self) -> int:
        return sum(len(e.detections) for e in self.videos.values())


@dataclass(frozen=True)
class FusionOutcome:
    kind: str  # inserted_new_video | inserted_new_track | fused
    merged_track: DetectionTrack
    fused_with: Optional[str] = None
    # the stored track as it was right before fusion
    replaced: Optional[DetectionTrack] = None


def _check_pair(d_new: DetectionTrack, d_exist: DetectionTrack):
    if d_new.video_id != d_exist.video_id:
        raise ValueError(f"videos differ: {d_new.video_id} vs {d_exist.video_id}")
    if d_new.num_frames != d_exist.num_frames:
        raise ValueError("track lengths differ")


def overlap_phi(d_new: DetectionTrack, d_exist: DetectionTrack) -> bool:
    _check_pair(d_new, d_exist)
    return any_frame_overlap(d_new.masks, d_exist.masks, PHI_IOU)


def fuse(d_new: DetectionTrack, d_exist: DetectionTrack) -> DetectionTrack:
    """Frame-wise merge of a new detection into an existing one.

    Flags take the elementwise max. A frame keeps the existing mask only when
    the existing label is selected and the new one is not. The merged track
    keeps the existing id and takes score and predicted IoU from ``d_new``.
    """
    _check_pair(d_new, d_exist)
    s_new = d_new.selected or (0,) * d_new.num_frames
    s_old = d_exist.selected or (0,) * d_exist.num_frames
    masks = []
    flags = []
    for t in range(d_new.num_frames):
        flags.append(max(s_new[t], s_old[t]))
        if s_old[t] == 1 and s_new[t] == 0:
            masks.append(d_exist.masks[t])
        else:
            masks.append(d_new.masks[t])
    return replace(d_new, detection_id=d_exist.detection_id,
                   masks=tuple(masks), selected=tuple(flags))


def _choose_partner(dv: List[DetectionTrack], d_new: DetectionTrack) -> Optional[int]:
    # highest best-frame IoU among overlapping tracks; ties to the smaller id
    best = None
    best_key = None
    for i, d in enumerate(dv):
        if not overlap_phi(d_new, d):
            continue
        key = (-best_frame_iou(d_new.masks, d.masks), d.detection_id)
        if best_key is None or key < best_key:
            best, best_key = i, key
    return best


def insert_with_outcome(dv: List[DetectionTrack], d_new: DetectionTrack
                        ) -> Tuple[List[DetectionTrack], FusionOutcome]:
    idx = _choose_partner(dv, d_new)
    out = list(dv)
    if idx is None:
        if any(d.detection_id == d_new.detection_id for d in dv):
            raise DuplicateDetectionError(
                f"video {d_new.video_id}: id {d_new.detection_id} already stored")
        out.append(d_new)
        return out, FusionOutcome("inserted_new_track", d_new)
    merged = fuse(d_new, dv[idx])
    out[idx] = merged
    return out, FusionOutcome("fused", merged, fused_with=dv[idx].detection_id,
                              replaced=dv[idx])


def insert(dv: List[DetectionTrack], d_new: DetectionTrack) -> List[DetectionTrack]:
    return insert_with_outcome(dv, d_new)[0]


def augment(dataset: TrainingDataset, retained: Mapping[str, DetectionSet]
            ) -> Tuple[TrainingDataset, List[FusionOutcome]]:
    """Fold one round of retained pseudo-labels into the store.

    Returns the next-round dataset and one outcome per new detection. The
    input dataset is left untouched.
    """
    new_round = dataset.round + 1
    videos = {v: e.copy() for v, e in dataset.videos.items()}
    outcomes: List[FusionOutcome] = []

    for vid in sorted(retained):
        dets = list(retained[vid])
        if not dets:
            continue
        ids = [d.detection_id for d in dets]
        if len(set(ids)) != len(ids):
            raise DuplicateDetectionError(f"video {vid}: duplicate ids in retained set")
        if vid not in videos:
            entry = VideoEntry(vid, dets[0].num_frames, PSEUDO, dets,
                               {d.detection_id: new_round for d in dets})
            videos[vid] = entry
            outcomes.extend(FusionOutcome("inserted_new_video", d) for d in dets)
            continue
        entry = videos[vid]
        for d in sorted(dets, key=lambda d: d.detection_id):
            if d.num_frames != entry.num_frames:
                raise ValueError(f"video {vid}: track {d.detection_id} length mismatch")
            entry.detections, outcome = insert_with_outcome(entry.detections, d)
            if outcome.kind == "inserted_new_track":
                entry.origin_round[d.detection_id] = new_round
            outcomes.append(outcome)

    return TrainingDataset(new_round, dict(sorted(videos.items()))), outcomes
