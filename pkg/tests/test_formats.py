import json
import os
from pathlib import Path

import numpy as np
import pytest

from pseudovis.formats import (
    ChecksumMismatch,
    SchemaError,
    atomic_write_text,
    base_dataset_from_gt,
    deserialize_state,
    dump_detections,
    load_detections,
    load_state,
    load_ytvis,
    parse_ytvis,
    save_state,
    serialize_state,
    to_ytvis,
)
from pseudovis.fusion import PSEUDO, TrainingDataset, VideoEntry
from pseudovis.masks import rle_decode, rle_encode
from pseudovis.nms import DetectionSet

from conftest import random_detections

SNIPPET = Path(__file__).parent / "data" / "ytvis_snippet.json"


def ellipse(h, w, cy, cx, ry, rx):
    yy, xx = np.mgrid[0:h, 0:w]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1


class TestYTVIS:
    def test_snippet(self):
        videos = load_ytvis(SNIPPET)
        assert sorted(videos) == ["1", "2"]
        v1 = videos["1"]
        assert (v1.num_frames, v1.height, v1.width) == (3, 720, 1280)
        assert len(v1.tracks) == 2 and v1.category_ids == [7, 26]
        assert v1.tracks[0][2] is None and v1.tracks[1][0] is None
        assert np.array_equal(rle_decode(v1.tracks[0][0]), ellipse(720, 1280, 300, 400, 80, 120))

    def test_snippet_areas_and_round_trip(self):
        raw = json.loads(SNIPPET.read_text())
        videos = parse_ytvis(raw)
        for ann in raw["annotations"]:
            track = videos[str(ann["video_id"])].tracks[
                [a["id"] for a in raw["annotations"] if a["video_id"] == ann["video_id"]].index(ann["id"])]
            for m, seg, area in zip(track, ann["segmentations"], ann["areas"]):
                if seg is None:
                    assert m is None
                    continue
                assert m.area == area
                assert list(rle_encode(rle_decode(m)).counts) == seg["counts"]
        again = parse_ytvis(to_ytvis(videos))
        assert [g.tracks for g in again.values()] == [g.tracks for g in videos.values()]

    def test_schema_errors(self):
        with pytest.raises(SchemaError):
            parse_ytvis({"annotations": []})
        bad = {"videos": [{"id": 1, "length": 1, "height": 2, "width": 2}],
               "annotations": [{"id": 1, "video_id": 1, "segmentations": [{"size": [2, 2], "counts": [3]}]}]}
        with pytest.raises(SchemaError):
            parse_ytvis(bad)
        bad["annotations"][0]["video_id"] = 9
        with pytest.raises(SchemaError):
            parse_ytvis(bad)

    def test_base_dataset(self):
        ds = base_dataset_from_gt(load_ytvis(SNIPPET))
        assert ds.round == 0 and ds.base_videos() == ["1", "2"]
        for e in ds.videos.values():
            assert all(d.selected == (1,) * e.num_frames and d.score == 1.0 for d in e.detections)


class TestDetections:
    def test_round_trip(self, tmp_path, rng):
        dets = random_detections(rng, (6, 6), 3, 4)
        path = tmp_path / "d.jsonl"
        path.write_text(dump_detections({"v": DetectionSet("v", dets)}))
        assert load_detections(path)["v"].detections == dets

    def test_json_array_gets_fallback_ids(self, tmp_path):
        rec = {"video_id": 5, "score": 0.5, "segmentations": [{"size": [1, 2], "counts": [0, 2]}]}
        path = tmp_path / "r.json"
        path.write_text(json.dumps([rec, rec]))
        ids = [d.detection_id for d in load_detections(path)["5"]]
        assert ids == ["000000", "000001"]

    @pytest.mark.parametrize("text", [
        "{not json\n",
        '{"video_id": "v", "score": 0.5}\n',
        '{"video_id": "v", "detection_id": "a", "score": 2, "segmentations": [null]}\n',
    ])
    def test_bad_records(self, tmp_path, text):
        path = tmp_path / "bad.jsonl"
        path.write_text(text)
        with pytest.raises(SchemaError):
            load_detections(path)

    def test_duplicate_ids(self, tmp_path):
        line = '{"video_id": "v", "detection_id": "a", "score": 0.5, "segmentations": [null]}\n'
        path = tmp_path / "dup.jsonl"
        path.write_text(line * 2)
        with pytest.raises(SchemaError):
            load_detections(path)


def sample_dataset(rng):
    ds = base_dataset_from_gt(load_ytvis(SNIPPET))
    dets = random_detections(rng, (6, 6), 4, 3, video="p", with_flags=True)
    ds.videos["p"] = VideoEntry("p", 4, PSEUDO, dets, {d.detection_id: 1 for d in dets})
    return TrainingDataset(1, dict(sorted(ds.videos.items())))


class TestState:
    def test_round_trip(self, tmp_path, rng):
        ds = sample_dataset(rng)
        path = tmp_path / "state.json"
        checksum = save_state(path, ds)
        loaded = load_state(path)
        assert loaded == ds
        assert serialize_state(loaded) == path.read_text()
        assert json.loads(path.read_text())["checksum"] == checksum

    def test_checksum_mismatch(self, rng):
        text = serialize_state(sample_dataset(rng))
        payload = json.loads(text)
        payload["round"] = 7
        with pytest.raises(ChecksumMismatch):
            deserialize_state(json.dumps(payload))

    def test_schema_version(self, rng):
        payload = json.loads(serialize_state(sample_dataset(rng)))
        payload["schema_version"] = 99
        with pytest.raises(SchemaError):
            deserialize_state(json.dumps(payload))
        with pytest.raises(SchemaError):
            deserialize_state("garbage")

    def test_atomic_write_keeps_old_file_on_failure(self, tmp_path, monkeypatch):
        path = tmp_path / "state.json"
        atomic_write_text(path, "old")

        def boom(*args):
            raise OSError("disk full")

        monkeypatch.setattr(os, "replace", boom)
        with pytest.raises(OSError):
            atomic_write_text(path, "new")
        assert path.read_text() == "old"
        assert [p.name for p in tmp_path.iterdir()] == ["state.json"]
