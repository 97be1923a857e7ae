import numpy as np
import pytest

from pseudovis.nms import DetectionSet, DetectionTrack
from pseudovis.quality import (
    ConfidenceOnlyScorer,
    MissingGroundTruth,
    OracleIoUScorer,
    PredictedIoUScorer,
    QualityConfig,
    SelectionUnset,
    apply_selection,
    make_scorer,
    quality_scores,
    retain,
    select_frames,
)

from conftest import box, make_det, random_track
from oracles import bitmaps, pixel_iou, pixel_track_iou

S = (8, 8)


def test_config_defaults():
    c = QualityConfig()
    assert (c.tau_th, c.conf_floor, c.nms_iou, c.drop_iou, c.rounds) == (0.75, 0.25, 0.5, 0.01, 2)
    assert c.tau_confidence_only == 0.85
    with pytest.raises(ValueError):
        QualityConfig(tau_th=1.5)
    with pytest.raises(ValueError):
        QualityConfig(rounds=0)


class TestQualityScores:
    def test_product(self):
        d = make_det("a", [None, None], score=0.8, pred_iou=(0.9, 0.5))
        assert quality_scores(d, PredictedIoUScorer()) == pytest.approx((0.72, 0.4))

    def test_unit_confidence_is_identity(self):
        d = make_det("a", [None] * 3, score=1.0, pred_iou=(0.1, 0.6, 0.95))
        assert quality_scores(d, PredictedIoUScorer()) == (0.1, 0.6, 0.95)

    def test_confidence_only(self):
        d = make_det("a", [None] * 4, score=0.9, pred_iou=(0.1, 0.2, 0.3, 0.4))
        assert quality_scores(d, ConfidenceOnlyScorer()) == (0.9,) * 4

    def test_missing_pred_iou_falls_back_to_confidence(self):
        d = make_det("a", [None] * 2, score=0.6)
        assert quality_scores(d, PredictedIoUScorer()) == (0.6, 0.6)

    def test_oracle_needs_gt(self):
        d = make_det("a", [None], video="unknown")
        with pytest.raises(MissingGroundTruth):
            quality_scores(d, OracleIoUScorer({}))
        with pytest.raises(MissingGroundTruth):
            make_scorer("oracle")


class TestSelect:
    def test_inclusive(self):
        assert select_frames([0.8, 0.75, 0.74], 0.75) == (1, 1, 0)

    def test_zero_threshold(self):
        assert select_frames([0.0, 0.3], 0.0) == (1, 1)

    def test_oracle_selection_matches_true_iou(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            gts = [random_track(rng, S, 4, p_absent=0.3) for _ in range(2)]
            det = DetectionTrack("d", "v", 1.0, random_track(rng, S, 4, p_absent=0.3))
            q = quality_scores(det, OracleIoUScorer({"v": gts}))
            sel = select_frames(q, 0.75)
            # independent: best GT by pixel track IoU, then per-frame pixel IoU
            ious = [pixel_track_iou(det.masks, g, S) for g in gts]
            gt = gts[int(np.argmax(ious))]
            expected = []
            for p, g in zip(bitmaps(det.masks, S), bitmaps(gt, S)):
                v = pixel_iou(p, g)
                expected.append(int((1.0 if v is None else v) >= 0.75))
            assert sel == tuple(expected)


class TestRetain:
    def test_drop_and_keep(self):
        ds = DetectionSet("v", [make_det("a", [None] * 3, selected=(0, 0, 0)),
                                make_det("b", [None] * 3, selected=(0, 1, 0))])
        assert [d.detection_id for d in retain(ds)] == ["b"]

    def test_counts_mixed(self):
        flags = [(1, 0), (0, 0), (1, 1), (0, 0), (0, 1)]
        ds = DetectionSet("v", [make_det(str(i), [None] * 2, selected=f) for i, f in enumerate(flags)])
        assert [d.detection_id for d in retain(ds)] == ["0", "2", "4"]

    def test_unset_flags(self):
        with pytest.raises(SelectionUnset):
            retain(DetectionSet("v", [make_det("a", [None])]))

    def test_monotone_in_tau(self):
        rng = np.random.default_rng(3)
        dets = [make_det(f"d{i}", [box(S, 0, 2, 0, 2)] * 5, score=float(rng.uniform(0.25, 1)),
                         pred_iou=tuple(rng.uniform(0, 1, 5))) for i in range(40)]
        ds = DetectionSet("v", dets)
        prev = None
        for tau in (0.5, 0.75, 0.85, 0.95):
            kept = {d.detection_id for d in retain(apply_selection(ds, PredictedIoUScorer(), tau))}
            if prev is not None:
                assert kept <= prev
            prev = kept
