"""
Class-agnostic video instance segmentation evaluation (AP / AR over mask
tracks) and Spearman rank correlation.

Matching follows the usual COCO-style protocol on track IoU: detections are
visited in descending score order and each takes the unmatched ground truth
of highest IoU at or above the threshold. Precision is interpolated at 101
recall points.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from .masks import MaskTrack, mean_present_area, track_iou

IOU_THRESHOLDS = np.round(np.linspace(0.5, 0.95, 10), 2)
RECALL_THRESHOLDS = np.linspace(0.0, 1.0, 101)
MAX_DETS = 100
AR_MAX_DETS = 10

# half-open on the small side, closed medium, open large
AREA_RANGES = {
    "all": (0.0, math.inf),
    "small": (0.0, 32.0 ** 2),
    "medium": (32.0 ** 2, 96.0 ** 2),
    "large": (96.0 ** 2, math.inf),
}

TABLE_COLUMNS = ("ap50", "ap75", "ap", "ap_s", "ap_m", "ap_l", "ar10")
TABLE_HEADERS = ("AP50", "AP75", "AP", "AP_S", "AP_M", "AP_L", "AR10")


class MissingVideo(KeyError):
    pass


def _in_range(area: float, rng_name: str) -> bool:
    lo, hi = AREA_RANGES[rng_name]
    if rng_name == "small":
        return area < hi
    if rng_name == "medium":
        return lo <= area <= hi
    if rng_name == "large":
        return area > lo
    return True


@dataclass
class EvalReport:
    ap: Optional[float]
    ap50: Optional[float]
    ap75: Optional[float]
    ap_s: Optional[float]
    ap_m: Optional[float]
    ap_l: Optional[float]
    ar10: Optional[float]
    # IoU threshold (as "0.50") -> 101 interpolated precisions, area "all"
    pr_curves: Dict[str, List[float]] = field(default_factory=dict)
    spearman_rho: Optional[float] = None

    def metrics(self) -> Dict[str, Optional[float]]:
        return {k: getattr(self, k) for k in TABLE_COLUMNS}

    def to_dict(self) -> dict:
        out = dict(self.metrics())
        out["pr_curves"] = self.pr_curves
        out["recall_thresholds"] = [round(float(r), 2) for r in RECALL_THRESHOLDS]
        if self.spearman_rho is not None:
            out["spearman_rho"] = self.spearman_rho
        return out

    def table(self, label: str = "method") -> str:
        def fmt(v):
            return "-" if v is None else f"{100 * v:.1f}"
        rows = [("Method",) + TABLE_HEADERS,
                (label,) + tuple(fmt(getattr(self, k)) for k in TABLE_COLUMNS)]
        width = max(len(r[0]) for r in rows)
        lines = [r[0].ljust(width) + "".join(c.rjust(7) for c in r[1:]) for r in rows]
        if self.spearman_rho is not None:
            lines.append(f"spearman_rho = {self.spearman_rho:.4f}")
        return "\n".join(lines) + "\n"


def class_agnostic_remap(annotations):
    """Collapse every category of a YouTubeVIS-style dict (or a list of
    annotation / result records) to category 1."""
    if annotations is None:
        return annotations
    data = copy.deepcopy(annotations)
    if isinstance(data, list):
        for ann in data:
            if "category_id" in ann:
                ann["category_id"] = 1
        return data
    for ann in data.get("annotations", []):
        ann["category_id"] = 1
    if data.get("categories"):
        data["categories"] = [{"id": 1, "name": "object", "supercategory": "object"}]
    return data


def _as_scored(pred) -> Tuple[float, MaskTrack]:
    if hasattr(pred, "score") and hasattr(pred, "masks"):
        return float(pred.score), tuple(pred.masks)
    score, masks = pred
    return float(score), tuple(masks)


@dataclass
class _VideoMatch:
    scores: np.ndarray      # (D,)
    matched: np.ndarray     # (T, D) bool
    ignored: np.ndarray     # (T, D) bool
    num_gt: int             # non-ignored ground truths


def _match_video(dets: List[Tuple[float, MaskTrack]], gts: Sequence[MaskTrack],
                 ious: np.ndarray, area_rng: str, max_dets: int) -> _VideoMatch:
    dets = dets[:max_dets]
    ious = ious[:len(dets)]
    gt_ignore = np.array([not _in_range(mean_present_area(g), area_rng) for g in gts], dtype=bool)
    dt_area = np.array([mean_present_area(m) for _, m in dets])
    n_thr = len(IOU_THRESHOLDS)
    matched = np.zeros((n_thr, len(dets)), dtype=bool)
    ignored = np.zeros((n_thr, len(dets)), dtype=bool)
    for ti, thr in enumerate(IOU_THRESHOLDS):
        thr = min(float(thr), 1 - 1e-10)
        gt_taken = np.zeros(len(gts), dtype=bool)
        for di in range(len(dets)):
            best = -1
            # non-ignored ground truths are preferred over ignored ones
            for want_ignored in (False, True):
                best_iou = -1.0
                for gi in range(len(gts)):
                    if gt_taken[gi] or gt_ignore[gi] != want_ignored:
                        continue
                    v = ious[di, gi]
                    if v >= thr and v > best_iou:
                        best, best_iou = gi, v
                if best >= 0:
                    break
            if best >= 0:
                gt_taken[best] = True
                matched[ti, di] = True
                ignored[ti, di] = gt_ignore[best]
            else:
                ignored[ti, di] = not _in_range(dt_area[di], area_rng)
    scores = np.array([s for s, _ in dets], dtype=np.float64)
    return _VideoMatch(scores, matched, ignored, int(np.sum(~gt_ignore)))


def _accumulate(matches: List[_VideoMatch]) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
    """Per-threshold AP and recall, or ``(None, None)`` without ground truth."""
    num_gt = sum(m.num_gt for m in matches)
    if num_gt == 0:
        return None, None
    n_thr = len(IOU_THRESHOLDS)
    if matches:
        scores = np.concatenate([m.scores for m in matches])
        matched = np.concatenate([m.matched for m in matches], axis=1)
        ignored = np.concatenate([m.ignored for m in matches], axis=1)
    else:
        scores = np.zeros(0)
        matched = ignored = np.zeros((n_thr, 0), dtype=bool)
    order = np.argsort(-scores, kind="mergesort")
    matched, ignored = matched[:, order], ignored[:, order]

    precision = np.zeros((n_thr, len(RECALL_THRESHOLDS)))
    recall = np.zeros(n_thr)
    for ti in range(n_thr):
        tp = np.cumsum(matched[ti] & ~ignored[ti]).astype(np.float64)
        fp = np.cumsum(~matched[ti] & ~ignored[ti]).astype(np.float64)
        if tp.size == 0:
            continue
        rc = tp / num_gt
        pr = tp / np.maximum(tp + fp, np.finfo(np.float64).eps)
        recall[ti] = rc[-1]
        pr = np.maximum.accumulate(pr[::-1])[::-1]
        inds = np.searchsorted(rc, RECALL_THRESHOLDS, side="left")
        valid = inds < len(pr)
        precision[ti, valid] = pr[inds[valid]]
    return precision, recall


def evaluate(preds: Mapping[str, Sequence], gts: Mapping[str, Sequence[MaskTrack]]) -> EvalReport:
    """Evaluate predictions against ground-truth tracks.

    ``preds`` maps video id to detections (objects with ``score`` and
    ``masks``, or ``(score, masks)`` pairs); ``gts`` maps video id to
    ground-truth mask tracks. Videos missing from ``preds`` have no
    detections; a prediction for an unknown video is an error.
    """
    unknown = sorted(set(preds) - set(gts))
    if unknown:
        raise MissingVideo(f"predictions for videos absent from ground truth: {unknown[:5]}")

    per_video = {}
    for vid in sorted(gts):
        gt_tracks = [tuple(g) for g in gts[vid]]
        dets = [_as_scored(p) for p in preds.get(vid, [])]
        order = np.argsort([-s for s, _ in dets], kind="mergesort")
        dets = [dets[i] for i in order][:MAX_DETS]
        ious = np.zeros((len(dets), len(gt_tracks)))
        for di, (_, m) in enumerate(dets):
            for gi, g in enumerate(gt_tracks):
                ious[di, gi] = track_iou(m, g)
        per_video[vid] = (dets, gt_tracks, ious)

    def run(area_rng, max_dets):
        return _accumulate([_match_video(d, g, i, area_rng, max_dets)
                            for d, g, i in per_video.values()])

    def mean_or_none(arr):
        return None if arr is None else float(np.mean(arr))

    prec_all, _ = run("all", MAX_DETS)
    _, rec10 = run("all", AR_MAX_DETS)
    ap_area = {}
    for name in ("small", "medium", "large"):
        p, _ = run(name, MAX_DETS)
        ap_area[name] = mean_or_none(p)

    if prec_all is None:
        return EvalReport(None, None, None, ap_area["small"], ap_area["medium"],
                          ap_area["large"], None)
    ap_per_thr = prec_all.mean(axis=1)
    curves = {f"{t:.2f}": [float(v) for v in prec_all[i]] for i, t in enumerate(IOU_THRESHOLDS)}
    return EvalReport(
        ap=float(ap_per_thr.mean()),
        ap50=float(ap_per_thr[0]),
        ap75=float(ap_per_thr[5]),
        ap_s=ap_area["small"],
        ap_m=ap_area["medium"],
        ap_l=ap_area["large"],
        ar10=float(rec10.mean()),
        pr_curves=curves,
    )


def spearman(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """Spearman's rho with average ranks for ties.

    Returns ``None`` when either input is constant (the correlation is
    undefined).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be 1-D sequences of equal length")
    if x.size < 2:
        raise ValueError("need at least two observations")
    rx = rankdata(x, method="average")
    ry = rankdata(y, method="average")
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    denom = math.sqrt(float(np.dot(dx, dx)) * float(np.dot(dy, dy)))
    if denom == 0:
        return None
    rho = float(np.dot(dx, dy)) / denom
    return max(-1.0, min(1.0, rho))
