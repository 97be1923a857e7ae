import math

import numpy as np
import pytest

from pseudovis.droploss import (
    audit,
    drop_gate,
    gate_open,
    max_gt_iou,
    max_gt_iou_per_frame,
    reference_mask_loss,
)
from pseudovis.masks import rle_encode

from conftest import box, random_track

S = (8, 8)


class TestGate:
    def test_examples(self):
        assert drop_gate([(0.0, 2.5)], 0.01) == [0.0]
        assert drop_gate([(0.5, 2.5)], 0.01) == [2.5]

    def test_strict_boundary(self):
        assert drop_gate([(0.01, 1.0)], 0.01) == [0.0]
        assert drop_gate([(0.0101, 1.0)], 0.01) == [1.0]
        assert not gate_open(0.0, 0.0)
        assert gate_open(1e-12, 0.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            drop_gate([(0.5, -1.0)])
        with pytest.raises(ValueError):
            drop_gate([(0.5, 1.0)], 1.0)

    def test_invariants(self, rng):
        ious = rng.uniform(0, 0.05, 200)
        losses = rng.uniform(0, 5, 200)
        gated = drop_gate(zip(ious, losses), 0.01)
        for g, v, i in zip(gated, losses, ious):
            assert g in (0.0, v) and g <= v
            assert (g == v) == (i > 0.01)

    def test_monotone_along_overlap_path(self):
        # prediction slides onto the target: gated loss switches on exactly once
        gt = (rle_encode(box(S, 2, 6, 2, 6)),)
        opened = []
        for shift in range(6, -1, -1):
            pred = (rle_encode(box(S, 2, 6, 2 + shift, min(8, 6 + shift))),)
            opened.append(gate_open(max_gt_iou(pred, [gt]), 0.01))
        assert opened == sorted(opened)
        assert opened[0] is False and opened[-1] is True


class TestMaxIoU:
    def test_no_gt(self):
        assert max_gt_iou((None,), []) == 0.0

    def test_per_frame(self):
        gt = (rle_encode(box(S, 0, 4, 0, 4)), None)
        pred = (rle_encode(box(S, 0, 4, 0, 2)), rle_encode(box(S, 0, 1, 0, 1)))
        assert max_gt_iou_per_frame(pred, [gt]) == [0.5, 0.0]


class TestReferenceLoss:
    def test_half_probability_on_empty(self):
        # bce = ln 2; dice = 1 / (32 + 1)
        loss = reference_mask_loss(np.full(S, 0.5), None)
        assert loss == pytest.approx(math.log(2) + 1 - 1 / 33, abs=1e-12)

    def test_perfect_prediction(self):
        g = box(S, 1, 3, 1, 4)
        loss = reference_mask_loss(g.astype(float), rle_encode(g))
        assert loss == pytest.approx(0.0, abs=1e-6)

    def test_all_wrong_dice_term(self):
        g = box(S, 0, 2, 0, 2)
        loss = reference_mask_loss((~g).astype(float), rle_encode(g))
        bce = -math.log(1e-7)
        assert loss == pytest.approx(bce + 1 - 1 / (64 + 1), rel=1e-9)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            reference_mask_loss(np.full(S, 1.5), None)
        with pytest.raises(ValueError):
            reference_mask_loss(np.zeros((2, 2)), rle_encode(np.zeros(S)))


class TestAudit:
    def test_track_mode(self):
        gt = (rle_encode(box(S, 0, 4, 0, 4)),)
        preds = [("hit", gt), ("miss", (rle_encode(box(S, 6, 8, 6, 8)),))]
        recs = audit(preds, [gt], S, 0.01)
        assert recs[0].gated_loss == recs[0].vanilla_loss
        assert recs[1].max_gt_iou == 0.0 and recs[1].gated_loss == 0.0
        assert recs[1].vanilla_loss > 0

    def test_per_frame_records(self, rng):
        gts = [random_track(rng, S, 3) for _ in range(2)]
        preds = [(f"p{i}", random_track(rng, S, 3)) for i in range(3)]
        recs = audit(preds, gts, S, 0.01, per_frame=True)
        assert [r.prediction_id for r in recs][:3] == ["p0@0", "p0@1", "p0@2"]
        for r in recs:
            assert r.gated_loss in (0.0, r.vanilla_loss)
            assert (r.gated_loss == r.vanilla_loss) or r.max_gt_iou <= 0.01
