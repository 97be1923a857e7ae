"""
Deterministic stand-in for the external segmentation model and IoU
predictor.

Ground-truth tracks are perturbed by translation plus a little erosion or
dilation until each frame reaches a requested IoU; the detection score and
per-frame predicted IoU are the true values plus Gaussian noise. False
positives are random blobs placed away from every ground-truth track.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
from scipy import ndimage

from .formats import GTVideo
from .masks import MaskTrack, frame_iou, rle_decode, rle_encode, track_iou
from .nms import DetectionSet, DetectionTrack
from .quality import match_ground_truth, true_frame_ious

logger = logging.getLogger(__name__)

TOL = 0.05
MAX_SEARCH = 50
MIN_PERTURB_AREA = 9
FP_MAX_GT_IOU = 0.3


@dataclass(frozen=True)
class NoiseConfig:
    target_iou_range: Tuple[float, float] = (0.55, 0.98)
    false_positive_rate: float = 1.0
    miss_rate: float = 0.1
    iou_predictor_noise: float = 0.05
    score_noise: float = 0.15
    duplicate_rate: float = 0.3
    fp_score_range: Tuple[float, float] = (0.3, 0.9)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.target_iou_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"bad target_iou_range {self.target_iou_range}")
        for name in ("false_positive_rate", "miss_rate", "iou_predictor_noise",
                     "score_noise", "duplicate_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target_iou_range"] = list(self.target_iou_range)
        d["fp_score_range"] = list(self.fp_score_range)
        return d


def _shift(mask: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(mask)
    h, w = mask.shape
    if abs(dy) >= h or abs(dx) >= w:
        return out
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[yd, xd] = mask[ys, xs]
    return out


def _morph(mask: np.ndarray, k: int) -> np.ndarray:
    if k > 0:
        return ndimage.binary_dilation(mask, iterations=k)
    if k < 0:
        return ndimage.binary_erosion(mask, iterations=-k)
    return mask


def _bitmap_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    return np.count_nonzero(a & b) / union if union else 1.0


def perturb_frame(gt: np.ndarray, target_iou: float, rng: np.random.Generator
                  ) -> Tuple[np.ndarray, bool]:
    """Perturb one binary frame towards ``target_iou``.

    Returns the new bitmap and whether the target band was reached.
    """
    if target_iou >= 1.0:
        return gt.copy(), True
    theta = rng.uniform(0.0, 2 * math.pi)
    morphs = [int(k) for k in rng.permutation([0, 1, -1])]
    dmax = gt.shape[0] + gt.shape[1]
    evals = 0
    best, best_err = gt.copy(), abs(1.0 - target_iou)

    def candidate(d, k):
        nonlocal evals, best, best_err
        evals += 1
        m = _morph(_shift(gt, int(round(d * math.sin(theta))), int(round(d * math.cos(theta)))), k)
        iou = _bitmap_iou(m, gt)
        err = abs(iou - target_iou)
        if err < best_err:
            best, best_err = m, err
        return iou

    for k in morphs:
        if candidate(0, k) < target_iou:
            continue
        # first shift distance that drops to or below the target
        lo, hi = 0, dmax
        while hi - lo > 1 and evals < MAX_SEARCH:
            mid = (lo + hi) // 2
            if candidate(mid, k) > target_iou:
                lo = mid
            else:
                hi = mid
        if evals < MAX_SEARCH:
            candidate(hi, k)
        if best_err <= TOL or evals >= MAX_SEARCH:
            break
    return best, best_err <= TOL


def perturb_track(gt: MaskTrack, target_iou: float, rng: np.random.Generator
                  ) -> Tuple[MaskTrack, bool]:
    """Perturb every frame of a ground-truth track.

    Empty frames stay empty; masks smaller than 9 pixels are copied
    unchanged. The flag is ``False`` if any frame missed the band (the
    closest achieved mask is used then).
    """
    if not 0.0 < target_iou <= 1.0:
        raise ValueError(f"target_iou must be in (0, 1], got {target_iou}")
    out = []
    ok = True
    for m in gt:
        if m is None or m.area == 0:
            out.append(m)
            continue
        if m.area < MIN_PERTURB_AREA:
            logger.info("mask of %d px too small to perturb; copied", m.area)
            ok = False
            out.append(m)
            continue
        bitmap, reached = perturb_frame(rle_decode(m), target_iou, rng)
        ok = ok and reached
        out.append(rle_encode(bitmap))
    return tuple(out), ok


# -- synthetic ground truth -------------------------------------------------

def _ellipse(h, w, cy, cx, ry, rx) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def synthesize_videos(n_videos: int, num_frames: int, height: int, width: int,
                      seed: int, prefix: str = "vid",
                      max_objects: int = 3) -> Dict[str, GTVideo]:
    """Random videos of moving ellipses, at most ``max_objects`` per video.

    Later objects occlude earlier ones; each object is visible over a
    contiguous span covering at least 60% of the frames.
    """
    rng = np.random.default_rng(seed)
    videos = {}
    for v in range(n_videos):
        vid = f"{prefix}{v:04d}"
        n_obj = int(rng.integers(1, max_objects + 1))
        paints = []
        for _ in range(n_obj):
            ry = rng.uniform(0.08, 0.3) * height
            rx = rng.uniform(0.08, 0.3) * width
            cy, cx = rng.uniform(0.2, 0.8) * height, rng.uniform(0.2, 0.8) * width
            vy, vx = rng.uniform(-1.0, 1.0, size=2)
            span = int(rng.integers(int(math.ceil(0.6 * num_frames)), num_frames + 1))
            start = int(rng.integers(0, num_frames - span + 1))
            paints.append((ry, rx, cy, cx, vy, vx, start, start + span))
        frames = [[None] * num_frames for _ in range(n_obj)]
        for t in range(num_frames):
            occupied = np.zeros((height, width), dtype=bool)
            for i in reversed(range(n_obj)):
                ry, rx, cy, cx, vy, vx, t0, t1 = paints[i]
                if not t0 <= t < t1:
                    continue
                m = _ellipse(height, width, cy + vy * t, cx + vx * t, ry, rx) & ~occupied
                occupied |= m
                frames[i][t] = m if m.any() else None
        tracks = [tuple(None if f is None else rle_encode(f) for f in fr) for fr in frames]
        tracks = [tr for tr in tracks if any(m is not None for m in tr)]
        gv = GTVideo(vid, num_frames, height, width, tracks,
                     [f"{vid}-gt{i}" for i in range(len(tracks))],
                     [int(rng.integers(1, 41)) for _ in tracks])
        videos[vid] = gv
    return videos


# -- detection dump ---------------------------------------------------------

def _clip01(x: float) -> float:
    return float(min(1.0, max(0.0, x)))


def _random_blob_track(gv: GTVideo, rng) -> MaskTrack:
    h, w = gv.height, gv.width
    ry = rng.uniform(0.06, 0.15) * h
    rx = rng.uniform(0.06, 0.15) * w
    cy, cx = rng.uniform(0, h), rng.uniform(0, w)
    vy, vx = rng.uniform(-1.0, 1.0, size=2)
    track = []
    for t in range(gv.num_frames):
        m = _ellipse(h, w, cy + vy * t, cx + vx * t, ry, rx)
        track.append(rle_encode(m) if m.any() else None)
    return tuple(track)


def _defined_mean(values) -> float:
    return float(np.mean(values)) if len(values) else 0.0


def _detection_from(track: MaskTrack, gt: MaskTrack, det_id: str, vid: str,
                    cfg: NoiseConfig, rng, score: Optional[float] = None) -> DetectionTrack:
    ious = true_frame_ious(track, gt)
    # frames where both masks are empty carry no information about quality
    defined = [v for p, g, v in zip(track, gt, ious) if frame_iou(p, g) is not None]
    if score is None:
        score = _clip01(_defined_mean(defined) + rng.normal(0.0, cfg.score_noise)
                        if cfg.score_noise > 0 else _defined_mean(defined))
    pred = tuple(_clip01(v + rng.normal(0.0, cfg.iou_predictor_noise))
                 if cfg.iou_predictor_noise > 0 else _clip01(v) for v in ious)
    return DetectionTrack(det_id, vid, score, track, pred_iou=pred)


def generate_dump(gt: Mapping[str, GTVideo], cfg: NoiseConfig,
                  id_prefix: Optional[str] = None) -> Dict[str, DetectionSet]:
    """Simulated model output for every ground-truth video.

    Detection ids are ``<prefix><video>-<n>`` with prefix ``s<seed>-`` by
    default, so dumps made with different seeds never share ids.
    """
    rng = np.random.default_rng(cfg.seed)
    prefix = f"s{cfg.seed}-" if id_prefix is None else id_prefix
    lo, hi = cfg.target_iou_range
    out = {}
    for vid in sorted(gt):
        gv = gt[vid]
        dets: List[DetectionTrack] = []

        def next_id():
            return f"{prefix}{vid}-{len(dets):03d}"

        for track in gv.tracks:
            if rng.random() < cfg.miss_rate:
                continue
            target = rng.uniform(lo, hi) if hi > lo else lo
            masks, _ = perturb_track(track, max(target, 1e-6), rng)
            det = _detection_from(masks, track, next_id(), vid, cfg, rng)
            dets.append(det)
            if rng.random() < cfg.duplicate_rate:
                dup_masks, _ = perturb_track(track, max(rng.uniform(lo, hi), 1e-6), rng)
                dup_score = det.score * rng.uniform(0.5, 0.95)
                dets.append(_detection_from(dup_masks, track, next_id(), vid, cfg, rng,
                                            score=dup_score))

        n_fp = int(rng.poisson(cfg.false_positive_rate)) if cfg.false_positive_rate > 0 else 0
        for _ in range(n_fp):
            for _attempt in range(20):
                blob = _random_blob_track(gv, rng)
                if all(track_iou(blob, g) < FP_MAX_GT_IOU for g in gv.tracks):
                    break
            else:
                continue
            idx = match_ground_truth(blob, gv.tracks)
            ref = gv.tracks[idx] if idx is not None else (None,) * gv.num_frames
            score = float(rng.uniform(*cfg.fp_score_range))
            dets.append(_detection_from(blob, ref, next_id(), vid, cfg, rng, score=score))
        out[vid] = DetectionSet(vid, dets)
    return out
