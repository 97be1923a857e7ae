"""Hand-built evaluation fixture shared by the evaluator and acceptance tests."""
import numpy as np

from pseudovis.masks import rle_encode

SHAPE = (10, 10)


def _bitmap(rows, cols):
    g = np.zeros(SHAPE, bool)
    g[rows[0]:rows[1], cols[0]:cols[1]] = True
    return g


def micro_fixture():
    """Three videos, two frames, two ground-truth tracks each.

    GT A is a 5x5 block in both frames (50 px), GT B a 4x5 block (40 px).
    p1 covers all of A in frame 0 and 5 px of it in frame 1 (IoU 30/50).
    p2 covers all of B in frame 0 and 2 px of it in frame 1 (IoU 22/40).
    fp sits on background in frame 0 only.
    """
    a = _bitmap((0, 5), (0, 5))
    b = _bitmap((6, 10), (5, 10))
    gt_a = (rle_encode(a), rle_encode(a))
    gt_b = (rle_encode(b), rle_encode(b))
    p1 = (rle_encode(a), rle_encode(_bitmap((0, 1), (0, 5))))
    p2 = (rle_encode(b), rle_encode(_bitmap((6, 7), (5, 7))))
    fp = (rle_encode(_bitmap((6, 10), (0, 4))), None)
    scores = {"v1": (0.9, 0.6, 0.7), "v2": (0.8, 0.3, 0.95), "v3": (0.5, 0.4, 0.2)}
    gts = {v: [gt_a, gt_b] for v in scores}
    preds = {v: [(s1, p1), (s2, p2), (s3, fp)] for v, (s1, s2, s3) in scores.items()}
    return preds, gts


# worked by hand from the global ranking F T T F T T T T F (6 ground truths)
MICRO_AP50 = 0.75
MICRO_AP_060 = (34 * (2 / 3) + 17 * 0.5) / 101
MICRO_AP = (2 * 0.75 + MICRO_AP_060) / 10
MICRO_AP75 = 0.0
MICRO_AR10 = 0.25
