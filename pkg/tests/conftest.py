import numpy as np
import pytest

from pseudovis.masks import rle_encode
from pseudovis.nms import DetectionTrack

_acceptance_results = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None or call.when != "call":
        return
    crit = marker.args[0]
    ok = call.excinfo is None
    prev = _acceptance_results.get(crit, (marker.args[1], True))
    _acceptance_results[crit] = (prev[0], prev[1] and ok)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_acceptance_results):
        title, ok = _acceptance_results[crit]
        terminalreporter.write_line(f"criterion {crit} [{title}]: {'PASS' if ok else 'FAIL'}")


def grid(shape, pixels):
    """Binary grid with the given (row, col) pixels set."""
    g = np.zeros(shape, dtype=bool)
    for r, c in pixels:
        g[r, c] = True
    return g


def box(shape, r0, r1, c0, c1):
    g = np.zeros(shape, dtype=bool)
    g[r0:r1, c0:c1] = True
    return g


def make_det(det_id, frames, score=0.9, video="v", pred_iou=None, selected=None):
    """Detection from a list of bitmaps / None."""
    masks = tuple(None if f is None else rle_encode(f) for f in frames)
    return DetectionTrack(det_id, video, score, masks, pred_iou=pred_iou, selected=selected)


def random_track(rng, shape, n_frames, p_absent=0.2, anchor=None, jitter=2):
    """Random rectangle track; with ``anchor`` the boxes stay near it so that
    tracks drawn from the same anchor tend to overlap."""
    h, w = shape
    frames = []
    for _ in range(n_frames):
        if rng.random() < p_absent:
            frames.append(None)
            continue
        if anchor is None:
            r0, c0 = rng.integers(0, h - 1), rng.integers(0, w - 1)
            r1, c1 = rng.integers(r0 + 1, h + 1), rng.integers(c0 + 1, w + 1)
        else:
            ar0, ar1, ac0, ac1 = anchor
            r0 = int(np.clip(ar0 + rng.integers(-jitter, jitter + 1), 0, h - 1))
            c0 = int(np.clip(ac0 + rng.integers(-jitter, jitter + 1), 0, w - 1))
            r1 = int(np.clip(ar1 + rng.integers(-jitter, jitter + 1), r0 + 1, h))
            c1 = int(np.clip(ac1 + rng.integers(-jitter, jitter + 1), c0 + 1, w))
        frames.append(box(shape, r0, r1, c0, c1))
    return tuple(None if f is None else rle_encode(f) for f in frames)


def random_anchor(rng, shape):
    h, w = shape
    r0, c0 = int(rng.integers(0, h - 2)), int(rng.integers(0, w - 2))
    return r0, int(rng.integers(r0 + 2, h + 1)), c0, int(rng.integers(c0 + 2, w + 1))


def random_detections(rng, shape, n_frames, n_dets, video="v", n_anchors=3, with_flags=False,
                      id_prefix="d"):
    anchors = [random_anchor(rng, shape) for _ in range(n_anchors)]
    dets = []
    for i in range(n_dets):
        anchor = anchors[int(rng.integers(len(anchors)))] if rng.random() < 0.8 else None
        masks = random_track(rng, shape, n_frames, anchor=anchor)
        score = float(np.round(rng.uniform(0, 1), 2))
        sel = tuple(int(v) for v in rng.integers(0, 2, n_frames)) if with_flags else None
        dets.append(DetectionTrack(f"{id_prefix}{i:02d}", video, score, masks, selected=sel))
    return dets


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
