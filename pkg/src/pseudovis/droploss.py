"""
Loss gate that discards mask losses of predictions with (near) zero overlap
to every ground-truth mask, plus a small BCE + Dice loss usable as the
ungated mask loss in audits.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .masks import FrameMask, MaskTrack, frame_iou, rle_decode, track_iou

BCE_EPS = 1e-7
DICE_SMOOTH = 1.0


@dataclass(frozen=True)
class LossRecord:
    prediction_id: str
    max_gt_iou: float
    vanilla_loss: float
    gated_loss: float


def max_gt_iou(pred: MaskTrack, gts: Sequence[MaskTrack]) -> float:
    return max((track_iou(pred, gt) for gt in gts), default=0.0)


def max_gt_iou_per_frame(pred: MaskTrack, gts: Sequence[MaskTrack]) -> List[float]:
    """Per-frame variant: for every frame, the best IoU over ground-truth
    masks in that frame. Undefined frames (both empty) give 0."""
    out = []
    for t, p in enumerate(pred):
        vals = [frame_iou(p, gt[t]) for gt in gts]
        out.append(max((v for v in vals if v is not None), default=0.0))
    return out


def gate_open(iou: float, tau_iou: float) -> bool:
    return iou > tau_iou


def drop_gate(records: Iterable[Tuple[float, float]], tau_iou: float = 0.01) -> List[float]:
    """Gated losses for ``(max_gt_iou, vanilla_loss)`` pairs.

    A loss passes through only when its IoU is strictly above ``tau_iou``.
    """
    if not 0.0 <= tau_iou < 1.0:
        raise ValueError(f"tau_iou must be in [0, 1), got {tau_iou}")
    out = []
    for iou, loss in records:
        if loss < 0:
            raise ValueError(f"negative loss {loss}")
        out.append(float(loss) if gate_open(iou, tau_iou) else 0.0)
    return out


def reference_mask_loss(pred_probs, gt: Optional[FrameMask]) -> float:
    """Mean binary cross-entropy plus ``1 - Dice`` against a binary mask.

    ``gt=None`` is an empty mask of the prediction's shape.
    """
    p = np.asarray(pred_probs, dtype=np.float64)
    if gt is None:
        g = np.zeros(p.shape, dtype=np.float64)
    else:
        if p.shape != gt.size:
            raise ValueError(f"prediction shape {p.shape} != mask size {gt.size}")
        g = rle_decode(gt).astype(np.float64)
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise ValueError("probabilities must lie in [0, 1]")
    pc = np.clip(p, BCE_EPS, 1 - BCE_EPS)
    bce = -np.mean(g * np.log(pc) + (1 - g) * np.log(1 - pc))
    dice = (2 * np.sum(p * g) + DICE_SMOOTH) / (np.sum(p) + np.sum(g) + DICE_SMOOTH)
    return float(bce + (1 - dice))


def track_reference_loss(pred: MaskTrack, gt: MaskTrack, shape) -> float:
    """Mean per-frame reference loss with hard 0/1 predictions."""
    losses = []
    for p, g in zip(pred, gt):
        probs = np.zeros(shape) if p is None else rle_decode(p).astype(np.float64)
        losses.append(reference_mask_loss(probs, g))
    return float(np.mean(losses)) if losses else 0.0


def audit(preds: Sequence[Tuple[str, MaskTrack]], gts: Sequence[MaskTrack], shape,
          tau_iou: float = 0.01, per_frame: bool = False) -> List[LossRecord]:
    """Loss records for the predictions of one video.

    The vanilla loss is computed against the best-matching ground truth (an
    empty track if there is none). In per-frame mode each frame is gated on
    its own and gets its own record, with id ``"<prediction_id>@<frame>"``.
    """
    records = []
    for pid, pred in preds:
        ious = [track_iou(pred, gt) for gt in gts]
        best = int(np.argmax(ious)) if ious else None
        target = gts[best] if best is not None else (None,) * len(pred)
        if not per_frame:
            miou = max(ious, default=0.0)
            vanilla = track_reference_loss(pred, target, shape)
            gated = drop_gate([(miou, vanilla)], tau_iou)[0]
            records.append(LossRecord(pid, miou, vanilla, gated))
            continue
        frame_max = max_gt_iou_per_frame(pred, gts)
        for t, (p, g) in enumerate(zip(pred, target)):
            vanilla = track_reference_loss((p,), (g,), shape)
            gated = drop_gate([(frame_max[t], vanilla)], tau_iou)[0]
            records.append(LossRecord(f"{pid}@{t}", frame_max[t], vanilla, gated))
    return records
