"""
Binary masks stored as column-major run-length encodings.

The run convention matches the uncompressed COCO / YouTubeVIS ``counts``
list: runs alternate background/foreground starting with background, and the
first run may be zero when pixel (0, 0) is foreground. IoU and area are
computed directly on the runs; nothing here decodes unless asked to.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np


class MaskShapeError(ValueError):
    pass


@dataclass(frozen=True)
class FrameMask:
    height: int
    width: int
    counts: Tuple[int, ...]
    # foreground intervals [start, end) in column-major pixel order
    _intervals: Tuple[Tuple[int, int], ...] = field(
        init=False, repr=False, compare=False)
    _area: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if self.height <= 0 or self.width <= 0:
            raise MaskShapeError(f"bad mask size {self.height}x{self.width}")
        if any(c < 0 for c in counts):
            raise ValueError("negative run length")
        if sum(counts) != self.height * self.width:
            raise ValueError(
                f"runs sum to {sum(counts)}, expected "
                f"{self.height * self.width}")
        if any(c == 0 for c in counts[1:]):
            raise ValueError("zero-length run after the leading run")
        object.__setattr__(self, "counts", counts)

        intervals = []
        pos = 0
        for i, c in enumerate(counts):
            if i % 2 == 1:
                intervals.append((pos, pos + c))
            pos += c
        object.__setattr__(self, "_intervals", tuple(intervals))
        object.__setattr__(self, "_area", sum(counts[1::2]))

    @property
    def size(self) -> Tuple[int, int]:
        return self.height, self.width

    @property
    def area(self) -> int:
        return self._area

    def is_empty(self) -> bool:
        return self._area == 0

    def to_dict(self) -> dict:
        return {"size": [self.height, self.width], "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, obj: dict) -> "FrameMask":
        """Build from a ``{"size": [h, w], "counts": [...]}`` record.

        Zero-length interior runs, which some writers emit, are merged away.
        """
        h, w = obj["size"]
        counts = obj["counts"]
        if isinstance(counts, (str, bytes)):
            raise ValueError("compressed RLE strings are not supported")
        return cls(int(h), int(w), normalize_counts(counts))


# A mask track: one optional mask per video frame. ``None`` means the object
# is absent in that frame and behaves as an empty mask.
MaskTrack = Tuple[Optional[FrameMask], ...]


def normalize_counts(counts: Sequence[int]) -> Tuple[int, ...]:
    """Merge zero-length interior runs so the result is canonical."""
    runs = []  # [length, is_foreground]
    for i, c in enumerate(counts):
        c = int(c)
        if c == 0:
            continue
        fg = i % 2 == 1
        if runs and runs[-1][1] == fg:
            runs[-1][0] += c
        else:
            runs.append([c, fg])
    out = [r[0] for r in runs]
    if not runs or runs[0][1]:
        out.insert(0, 0)
    return tuple(out)


def rle_encode(bitmap) -> FrameMask:
    arr = np.asarray(bitmap)
    if arr.ndim != 2 or arr.size == 0:
        raise MaskShapeError(f"expected a non-empty 2-D grid, got {arr.shape}")
    h, w = arr.shape
    flat = (arr != 0).ravel(order="F").astype(np.int8)
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return FrameMask(h, w, tuple(runs))


def rle_decode(mask: FrameMask) -> np.ndarray:
    flat = np.zeros(mask.height * mask.width, dtype=bool)
    for start, end in mask._intervals:
        flat[start:end] = True
    return flat.reshape((mask.height, mask.width), order="F")


def empty_mask(height: int, width: int) -> FrameMask:
    return FrameMask(height, width, (height * width,))


def mask_area(mask: Optional[FrameMask]) -> int:
    return 0 if mask is None else mask.area


def _intersection(a: FrameMask, b: FrameMask) -> int:
    ia, ib = a._intervals, b._intervals
    i = j = 0
    total = 0
    while i < len(ia) and j < len(ib):
        s = max(ia[i][0], ib[j][0])
        e = min(ia[i][1], ib[j][1])
        if e > s:
            total += e - s
        if ia[i][1] < ib[j][1]:
            i += 1
        else:
            j += 1
    return total


def _check_same_size(a: FrameMask, b: FrameMask):
    if a.size != b.size:
        raise MaskShapeError(f"mask sizes differ: {a.size} vs {b.size}")


def inter_union(a: Optional[FrameMask], b: Optional[FrameMask]) -> Tuple[int, int]:
    """Pixel counts of intersection and union; ``None`` counts as empty."""
    if a is None and b is None:
        return 0, 0
    if a is None:
        return 0, b.area
    if b is None:
        return 0, a.area
    _check_same_size(a, b)
    if a.area == 0 or b.area == 0:
        return 0, a.area + b.area
    inter = _intersection(a, b)
    return inter, a.area + b.area - inter


def frame_iou(a: Optional[FrameMask], b: Optional[FrameMask]) -> Optional[float]:
    """IoU of two frame masks, or ``None`` when both are empty (0/0)."""
    inter, union = inter_union(a, b)
    if union == 0:
        return None
    return inter / union


def _check_same_length(a: Sequence, b: Sequence):
    if len(a) != len(b):
        raise MaskShapeError(f"track lengths differ: {len(a)} vs {len(b)}")


def track_iou(a: MaskTrack, b: MaskTrack) -> float:
    """Summed intersection over summed union across all frames.

    Two entirely empty tracks have IoU 1.
    """
    _check_same_length(a, b)
    inter = union = 0
    for ma, mb in zip(a, b):
        i, u = inter_union(ma, mb)
        inter += i
        union += u
    if union == 0:
        return 1.0
    return inter / union


def frame_ious(a: MaskTrack, b: MaskTrack) -> list:
    _check_same_length(a, b)
    return [frame_iou(ma, mb) for ma, mb in zip(a, b)]


def best_frame_iou(a: MaskTrack, b: MaskTrack) -> float:
    """Largest defined per-frame IoU, 0.0 if no frame is defined."""
    vals = [v for v in frame_ious(a, b) if v is not None]
    return max(vals, default=0.0)


def any_frame_overlap(a: MaskTrack, b: MaskTrack, thresh: float) -> bool:
    _check_same_length(a, b)
    for ma, mb in zip(a, b):
        iou = frame_iou(ma, mb)
        if iou is not None and iou >= thresh:
            return True
    return False


def track_from_bitmaps(frames) -> MaskTrack:
    """Encode a sequence of 2-D grids (or ``None`` for absent frames)."""
    return tuple(None if f is None else rle_encode(f) for f in frames)


def track_size(track: MaskTrack) -> Optional[Tuple[int, int]]:
    for m in track:
        if m is not None:
            return m.size
    return None


def mean_present_area(track: MaskTrack) -> float:
    """Average mask area over frames where the mask is non-empty."""
    areas = [m.area for m in track if m is not None and m.area > 0]
    if not areas:
        return 0.0
    return float(sum(areas)) / len(areas)
