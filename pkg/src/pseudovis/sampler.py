"""
Training-time sampling of frames and sources.

Only frames in which every stored detection of a video is selected may be
sampled; each batch draws 3 of them uniformly without replacement. The
source of each batch (base synthetic videos or pseudo-labelled videos) is a
fair coin. The generator is numpy's PCG64 so a seed pins the whole stream.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Sequence, Set, Tuple

import numpy as np

from .fusion import BASE, PSEUDO, TrainingDataset, VideoEntry
from .nms import DetectionTrack

FRAMES_PER_SAMPLE = 3


class TooFewEligibleFrames(ValueError):
    pass


class NoEligibleVideos(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplePlan:
    video_id: str
    frame_indices: Tuple[int, ...]
    source: str

    def to_dict(self) -> dict:
        return {"video_id": self.video_id,
                "frame_indices": list(self.frame_indices),
                "source": self.source}


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def eligible_frames(detections: Sequence[DetectionTrack], num_frames: int = None) -> Set[int]:
    """Frames where every detection is selected.

    With no detections every frame qualifies; ``num_frames`` is then needed
    to know how many frames there are.
    """
    if not detections:
        if num_frames is None:
            raise ValueError("num_frames required for a video without detections")
        return set(range(num_frames))
    n = detections[0].num_frames
    flags = np.ones(n, dtype=bool)
    for d in detections:
        if d.selected is None:
            raise ValueError(f"detection {d.detection_id} has no selection flags")
        flags &= np.asarray(d.selected, dtype=bool)
    return set(np.flatnonzero(flags).tolist())


def sample_frames(eligible: Iterable[int], rng: np.random.Generator,
                  k: int = FRAMES_PER_SAMPLE) -> Tuple[int, ...]:
    pool = sorted(eligible)
    if len(pool) < k:
        raise TooFewEligibleFrames(f"{len(pool)} eligible frames, need {k}")
    idx = rng.choice(len(pool), size=k, replace=False)
    return tuple(sorted(pool[i] for i in idx))


def choose_source(rng: np.random.Generator, has_pseudo: bool = True) -> str:
    if not has_pseudo:
        return BASE
    return PSEUDO if rng.random() < 0.5 else BASE


def _entry_eligible(entry: VideoEntry) -> Set[int]:
    return eligible_frames(entry.detections, entry.num_frames)


def sampling_pools(dataset: TrainingDataset) -> dict:
    """Per-source lists of ``(video_id, eligible frames)`` usable this epoch.

    Videos with fewer than 3 eligible frames are left out; pseudo videos
    without any detection are left out as well since they supervise nothing.
    """
    pools = {BASE: [], PSEUDO: []}
    for vid, entry in sorted(dataset.videos.items()):
        if entry.provenance == PSEUDO and not entry.detections:
            continue
        frames = _entry_eligible(entry)
        if len(frames) < FRAMES_PER_SAMPLE:
            continue
        pools[entry.provenance].append((vid, sorted(frames)))
    return pools


def sample_stream(dataset: TrainingDataset, n_batches: int, seed: int) -> List[SamplePlan]:
    """Draw ``n_batches`` plans: source coin, then a video, then 3 frames.

    The coin is only tossed when the pseudo pool is non-empty.
    """
    rng = make_rng(seed)
    pools = sampling_pools(dataset)
    plans = []
    for _ in range(n_batches):
        source = choose_source(rng, has_pseudo=bool(pools[PSEUDO]))
        pool = pools[source]
        if not pool:
            raise NoEligibleVideos(f"no eligible {source} videos to sample from")
        vid, frames = pool[int(rng.integers(len(pool)))]
        plans.append(SamplePlan(vid, sample_frames(frames, rng), source))
    return plans
