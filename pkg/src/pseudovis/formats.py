"""
On-disk formats.

* Ground truth / base videos: YouTubeVIS-style JSON (``videos``,
  ``annotations`` with per-frame uncompressed RLE or ``null``,
  ``categories``).
* Detections: JSON lines, one detection per line::

      {"video_id": ..., "detection_id": ..., "score": 0.9,
       "segmentations": [{"size": [h, w], "counts": [...]} | null, ...],
       "pred_ious": [0.8, ...]}            # optional

  A plain JSON array of YouTubeVIS result records is accepted as well;
  missing ``detection_id`` values are then generated from the position.
* Round state: canonical JSON with a schema version and a SHA-256 checksum
  of the payload, written atomically.
"""
from __future__ import annotations

import contextlib
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Union

from .fusion import BASE, TrainingDataset, VideoEntry
from .masks import FrameMask, MaskTrack, track_size
from .nms import DetectionSet, DetectionTrack

STATE_SCHEMA_VERSION = 1

PathLike = Union[str, os.PathLike]


class SchemaError(ValueError):
    exit_code = 2


class ChecksumMismatch(ValueError):
    exit_code = 3


@dataclass
class GTVideo:
    video_id: str
    num_frames: int
    height: int
    width: int
    tracks: List[MaskTrack] = field(default_factory=list)
    track_ids: List[str] = field(default_factory=list)
    category_ids: List[int] = field(default_factory=list)


def _video_key(v) -> str:
    return str(v)


def _parse_segmentations(segs, where: str, size=None) -> MaskTrack:
    if not isinstance(segs, list):
        raise SchemaError(f"{where}: segmentations must be a list")
    out = []
    for t, s in enumerate(segs):
        if s is None:
            out.append(None)
            continue
        if not isinstance(s, dict) or "counts" not in s:
            raise SchemaError(f"{where}: frame {t} is not an RLE record")
        if "size" not in s:
            if size is None:
                raise SchemaError(f"{where}: frame {t} has no size")
            s = dict(s, size=list(size))
        try:
            out.append(FrameMask.from_dict(s))
        except (ValueError, TypeError) as exc:
            raise SchemaError(f"{where}: frame {t}: {exc}") from None
    sizes = {m.size for m in out if m is not None}
    if len(sizes) > 1:
        raise SchemaError(f"{where}: inconsistent mask sizes {sorted(sizes)}")
    return tuple(out)


def encode_segmentations(track: MaskTrack) -> list:
    return [None if m is None else m.to_dict() for m in track]


# -- ground truth -----------------------------------------------------------

def parse_ytvis(data: Mapping) -> Dict[str, GTVideo]:
    if not isinstance(data, Mapping) or "videos" not in data:
        raise SchemaError("annotation file needs a 'videos' list")
    videos = {}
    for v in data["videos"]:
        try:
            vid = _video_key(v["id"])
            n = int(v["length"]) if "length" in v else len(v["file_names"])
            videos[vid] = GTVideo(vid, n, int(v["height"]), int(v["width"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad video record {v!r:.80}: {exc}") from None
    for ann in data.get("annotations", []):
        vid = _video_key(ann.get("video_id"))
        if vid not in videos:
            raise SchemaError(f"annotation {ann.get('id')} refers to unknown video {vid}")
        gv = videos[vid]
        track = _parse_segmentations(ann.get("segmentations"), f"annotation {ann.get('id')}",
                                     size=(gv.height, gv.width))
        if len(track) != gv.num_frames:
            raise SchemaError(f"annotation {ann.get('id')}: {len(track)} frames, "
                              f"video has {gv.num_frames}")
        sz = track_size(track)
        if sz is not None and sz != (gv.height, gv.width):
            raise SchemaError(f"annotation {ann.get('id')}: mask size {sz} != video size")
        gv.tracks.append(track)
        gv.track_ids.append(str(ann.get("id", len(gv.tracks))))
        gv.category_ids.append(int(ann.get("category_id", 1)))
    return dict(sorted(videos.items()))


def load_ytvis(path: PathLike) -> Dict[str, GTVideo]:
    return parse_ytvis(_read_json(path))


def to_ytvis(videos: Mapping[str, GTVideo]) -> dict:
    vids, anns = [], []
    ann_id = 1
    for vid, gv in sorted(videos.items()):
        vids.append({"id": vid, "length": gv.num_frames, "height": gv.height,
                     "width": gv.width,
                     "file_names": [f"{vid}/{t:05d}.jpg" for t in range(gv.num_frames)]})
        for i, track in enumerate(gv.tracks):
            cat = gv.category_ids[i] if i < len(gv.category_ids) else 1
            anns.append({"id": ann_id, "video_id": vid, "category_id": cat, "iscrowd": 0,
                         "segmentations": encode_segmentations(track),
                         "areas": [None if m is None else m.area for m in track]})
            ann_id += 1
    return {"videos": vids, "annotations": anns,
            "categories": [{"id": 1, "name": "object", "supercategory": "object"}]}


def gt_tracks(videos: Mapping[str, GTVideo]) -> Dict[str, List[MaskTrack]]:
    return {vid: list(gv.tracks) for vid, gv in videos.items()}


# -- detections -------------------------------------------------------------

def parse_detection(rec: Mapping, fallback_id: Optional[str] = None) -> DetectionTrack:
    try:
        vid = _video_key(rec["video_id"])
        det_id = rec.get("detection_id", fallback_id)
        if det_id is None:
            raise KeyError("detection_id")
        score = float(rec["score"])
        segs = rec["segmentations"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad detection record: missing/invalid {exc}") from None
    masks = _parse_segmentations(segs, f"detection {det_id}")
    pred = rec.get("pred_ious")
    try:
        return DetectionTrack(str(det_id), vid, score, masks,
                              pred_iou=None if pred is None else tuple(pred))
    except (ValueError, TypeError) as exc:
        raise SchemaError(str(exc)) from None


def detection_record(d: DetectionTrack) -> dict:
    rec = {"video_id": d.video_id, "detection_id": d.detection_id, "score": d.score,
           "segmentations": encode_segmentations(d.masks)}
    if d.pred_iou is not None:
        rec["pred_ious"] = list(d.pred_iou)
    return rec


def load_detections(path: PathLike) -> Dict[str, DetectionSet]:
    """Read a detections file into per-video sets (videos in sorted order)."""
    text = Path(path).read_text()
    records = []
    stripped = text.lstrip()
    if stripped.startswith("["):
        try:
            arr = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: {exc}") from None
        records = [(rec, f"{i:06d}") for i, rec in enumerate(arr)]
    else:
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                records.append((json.loads(line), f"{lineno:06d}"))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None
    by_video: Dict[str, List[DetectionTrack]] = {}
    for rec, fallback in records:
        if not isinstance(rec, Mapping):
            raise SchemaError(f"{path}: record is not an object")
        d = parse_detection(rec, fallback)
        by_video.setdefault(d.video_id, []).append(d)
    out = {}
    for vid in sorted(by_video):
        ids = [d.detection_id for d in by_video[vid]]
        if len(set(ids)) != len(ids):
            raise SchemaError(f"video {vid}: duplicate detection ids")
        try:
            out[vid] = DetectionSet(vid, by_video[vid])
        except ValueError as exc:
            raise SchemaError(str(exc)) from None
    return out


def dump_detections(sets: Mapping[str, DetectionSet]) -> str:
    lines = []
    for vid in sorted(sets):
        for d in sets[vid]:
            lines.append(canonical_json(detection_record(d)))
    return "".join(line + "\n" for line in lines)


# -- round state ------------------------------------------------------------

def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _state_payload(ds: TrainingDataset) -> dict:
    videos = {}
    for vid, e in sorted(ds.videos.items()):
        dets = []
        for d in e.detections:
            rec = detection_record(d)
            rec["selected"] = None if d.selected is None else list(d.selected)
            rec["origin_round"] = e.origin_round.get(d.detection_id)
            dets.append(rec)
        videos[vid] = {"num_frames": e.num_frames, "provenance": e.provenance,
                       "detections": dets}
    return {"schema_version": STATE_SCHEMA_VERSION, "round": ds.round, "videos": videos}


def state_checksum(payload: Mapping) -> str:
    body = {k: v for k, v in payload.items() if k != "checksum"}
    return hashlib.sha256(canonical_json(body).encode()).hexdigest()


def serialize_state(ds: TrainingDataset) -> str:
    payload = _state_payload(ds)
    payload["checksum"] = state_checksum(payload)
    return canonical_json(payload) + "\n"


def deserialize_state(text: str) -> TrainingDataset:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"state file is not JSON: {exc}") from None
    if not isinstance(payload, dict) or payload.get("schema_version") != STATE_SCHEMA_VERSION:
        raise SchemaError("unsupported state schema version")
    if payload.get("checksum") != state_checksum(payload):
        raise ChecksumMismatch("state checksum does not match its contents")
    videos = {}
    try:
        for vid, e in payload["videos"].items():
            dets, origin = [], {}
            for rec in e["detections"]:
                d = parse_detection(dict(rec, video_id=vid))
                if rec.get("selected") is not None:
                    d = d.with_selection(rec["selected"])
                dets.append(d)
                if rec.get("origin_round") is not None:
                    origin[d.detection_id] = int(rec["origin_round"])
            videos[vid] = VideoEntry(vid, int(e["num_frames"]), e["provenance"], dets, origin)
        return TrainingDataset(int(payload["round"]), videos)
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed state file: {exc}") from None
    except ValueError as exc:
        raise SchemaError(str(exc)) from None


def load_state(path: PathLike) -> TrainingDataset:
    return deserialize_state(Path(path).read_text())


def atomic_write_text(path: PathLike, text: str):
    """Write via temp file + fsync + rename so readers never see a torn file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise
    with contextlib.suppress(OSError):
        dfd = os.open(path.parent, os.O_RDONLY)
        try:
            os.fsync(dfd)
        finally:
            os.close(dfd)


def save_state(path: PathLike, ds: TrainingDataset) -> str:
    """Persist the dataset; returns the checksum written."""
    text = serialize_state(ds)
    atomic_write_text(path, text)
    return json.loads(text)["checksum"]


@contextlib.contextmanager
def state_lock(path: PathLike):
    """Advisory exclusive lock on ``<state>.lock`` for the orchestrator."""
    import fcntl

    lock_path = Path(str(path) + ".lock")
    lock_path.parent.mkdir(parents=True, exist_ok=True)
    with open(lock_path, "w") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def base_dataset_from_gt(videos: Mapping[str, GTVideo]) -> TrainingDataset:
    """Round-0 store holding labelled synthetic videos: every frame of every
    ground-truth track counts as selected."""
    entries = {}
    for vid, gv in sorted(videos.items()):
        dets = [DetectionTrack(tid, vid, 1.0, track, selected=(1,) * gv.num_frames)
                for tid, track in zip(gv.track_ids, gv.tracks)]
        entries[vid] = VideoEntry(vid, gv.num_frames, BASE, dets, {d.detection_id: 0 for d in dets})
    return TrainingDataset(0, entries)


def _read_json(path: PathLike):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from None
