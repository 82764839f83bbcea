"""Reading, writing, and validation of grounded datasets and predictions.

Ground truth lives as one JSON file per video. Each frame carries its
instrument instances (each an instance mask, an instrument class, and an
optional triplet assignment) plus the frame-level triplet labels. Three
prediction formats are supported: segmentation and detection files are
arrays of scored detections, recognition files are arrays of per-frame
score vectors.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import DatasetError
from .masks import BBox, MaskError, RleMask
from .schema import TripletSchema

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GroundedInstance:
    """One instrument instance, optionally carrying a triplet assignment."""

    instance_id: int
    instrument_id: int
    triplet_id: int | None
    mask: RleMask
    flags: frozenset[str] = frozenset()


@dataclass(frozen=True)
class FrameRecord:
    """One annotated frame: instances plus frame-level triplet labels."""

    video_id: str
    frame_id: int
    width: int
    height: int
    instances: tuple[GroundedInstance, ...]
    frame_triplets: tuple[int, ...]


@dataclass(frozen=True)
class DetectionRecord:
    """A scored triplet detection with mask and/or box geometry."""

    video_id: str
    frame_id: int
    triplet_id: int
    score: float
    mask: RleMask | None = None
    bbox: BBox | None = None


@dataclass(frozen=True)
class RecognitionRecord:
    """Frame-level score vector over the full triplet vocabulary."""

    video_id: str
    frame_id: int
    scores: tuple[float, ...]


@dataclass(frozen=True)
class StatsSummary:
    """Aggregate dataset counts and per-class histograms."""

    n_frames: int
    n_instances: int
    n_grounded: int
    per_video: dict[str, dict[str, int]] = field(repr=False)
    histograms: dict[str, dict[int, int]] = field(repr=False)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "frames": self.n_frames,
            "instances": self.n_instances,
            "grounded_triplets": self.n_grounded,
            "per_video": {
                vid: dict(counts) for vid, counts in sorted(self.per_video.items())
            },
            "histograms": {
                comp: {str(k): v for k, v in sorted(hist.items())}
                for comp, hist in self.histograms.items()
            },
        }

    def render_text(self) -> str:
        return (
            f"{self.n_frames:,} annotated frames and "
            f"{self.n_grounded:,} spatially grounded triplets "
            f"({self.n_instances:,} instrument instances, "
            f"{len(self.per_video)} videos)"
        )


def _expect_int(obj: Any, locus: str) -> int:
    if not isinstance(obj, int) or isinstance(obj, bool):
        raise DatasetError(f"{locus}: expected an integer, got {type(obj).__name__}")
    return obj


def _expect_str(obj: Any, locus: str) -> str:
    if not isinstance(obj, str):
        raise DatasetError(f"{locus}: expected a string, got {type(obj).__name__}")
    return obj


def _expect_number(obj: Any, locus: str) -> float:
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise DatasetError(f"{locus}: expected a number, got {type(obj).__name__}")
    value = float(obj)
    if value != value or value in (float("inf"), float("-inf")):
        raise DatasetError(f"{locus}: non-finite value")
    return value


def _parse_instance(
    obj: Any, locus: str, schema: TripletSchema, width: int, height: int,
    require_triplet_field: bool = True,
) -> GroundedInstance:
    if not isinstance(obj, dict):
        raise DatasetError(f"{locus}: instance must be an object")
    instance_id = _expect_int(obj.get("instance_id"), f"{locus}.instance_id")
    instrument_id = _expect_int(obj.get("instrument_id"), f"{locus}.instrument_id")
    if not 0 <= instrument_id < schema.n_instruments:
        raise DatasetError(
            f"{locus}.instrument_id: {instrument_id} outside "
            f"[0, {schema.n_instruments})"
        )
    triplet_raw = obj.get("triplet_id")
    if triplet_raw is None:
        triplet_id = None
        if require_triplet_field and "triplet_id" not in obj:
            # GT files spell out null explicitly; a mask-stream file omits it
            raise DatasetError(f"{locus}: missing triplet_id field (use null)")
    else:
        triplet_id = _expect_int(triplet_raw, f"{locus}.triplet_id")
        if triplet_id not in schema.triplets:
            raise DatasetError(f"{locus}.triplet_id: unknown triplet {triplet_id}")
        if schema.project(triplet_id, "i") != instrument_id:
            raise DatasetError(
                f"{locus}: triplet {triplet_id} has instrument "
                f"{schema.project(triplet_id, 'i')} but instance declares "
                f"{instrument_id}"
            )
    flags_raw = obj.get("flags", [])
    if not isinstance(flags_raw, list) or not all(isinstance(f, str) for f in flags_raw):
        raise DatasetError(f"{locus}.flags: must be a list of strings")
    try:
        mask = RleMask.from_json_dict(obj.get("mask"))
    except MaskError as exc:
        raise DatasetError(f"{locus}.mask: {exc}") from exc
    if (mask.height, mask.width) != (height, width):
        raise DatasetError(
            f"{locus}.mask: size {mask.height}x{mask.width} does not match "
            f"frame {height}x{width}"
        )
    if mask.area == 0:
        raise DatasetError(f"{locus}.mask: empty mask")
    return GroundedInstance(
        instance_id=instance_id,
        instrument_id=instrument_id,
        triplet_id=triplet_id,
        mask=mask,
        flags=frozenset(flags_raw),
    )


def parse_video_file(
    path: Path, schema: TripletSchema, require_triplet_field: bool = True
) -> list[FrameRecord]:
    """Parse one per-video JSON file into validated FrameRecords.

    ``require_triplet_field=False`` accepts mask-stream files, which share
    the shape but omit triplet assignments.
    """
    try:
        text = path.read_text(encoding="utf-8")
    except OSError:
        raise
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise DatasetError(f"{path}: top level must be an object")
    video_id = _expect_str(doc.get("video_id"), f"{path}: video_id")
    if path.stem != video_id:
        raise DatasetError(
            f"{path}: video_id {video_id!r} does not match file name"
        )
    width = _expect_int(doc.get("width"), f"{path}: width")
    height = _expect_int(doc.get("height"), f"{path}: height")
    if width < 1 or height < 1:
        raise DatasetError(f"{path}: frame size {width}x{height} must be positive")
    frames_raw = doc.get("frames")
    if not isinstance(frames_raw, list):
        raise DatasetError(f"{path}: frames must be an array")

    records = []
    seen_frames: set[int] = set()
    for f_idx, frame_obj in enumerate(frames_raw):
        locus = f"{path}: frames[{f_idx}]"
        if not isinstance(frame_obj, dict):
            raise DatasetError(f"{locus}: frame must be an object")
        frame_id = _expect_int(frame_obj.get("frame_id"), f"{locus}.frame_id")
        if frame_id in seen_frames:
            raise DatasetError(f"{locus}: duplicate frame_id {frame_id}")
        seen_frames.add(frame_id)

        triplets_raw = frame_obj.get("frame_triplets")
        if not isinstance(triplets_raw, list):
            raise DatasetError(f"{locus}.frame_triplets: must be an array")
        frame_triplets = []
        for t_idx, tid in enumerate(triplets_raw):
            tid = _expect_int(tid, f"{locus}.frame_triplets[{t_idx}]")
            if tid not in schema.triplets:
                raise DatasetError(
                    f"{locus}.frame_triplets[{t_idx}]: unknown triplet {tid}"
                )
            frame_triplets.append(tid)

        instances_raw = frame_obj.get("instances")
        if not isinstance(instances_raw, list):
            raise DatasetError(f"{locus}.instances: must be an array")
        instances = []
        seen_ids: set[int] = set()
        for i_idx, inst_obj in enumerate(instances_raw):
            inst = _parse_instance(
                inst_obj, f"{locus}.instances[{i_idx}]", schema, width, height,
                require_triplet_field=require_triplet_field,
            )
            if inst.instance_id in seen_ids:
                raise DatasetError(
                    f"{locus}.instances[{i_idx}]: duplicate instance_id "
                    f"{inst.instance_id}"
                )
            seen_ids.add(inst.instance_id)
            instances.append(inst)

        assigned = {g.triplet_id for g in instances if g.triplet_id is not None}
        missing = assigned - set(frame_triplets)
        if missing:
            raise DatasetError(
                f"{locus}: assigned triplets {sorted(missing)} absent from "
                f"frame_triplets"
            )
        records.append(
            FrameRecord(
                video_id=video_id,
                frame_id=frame_id,
                width=width,
                height=height,
                instances=tuple(sorted(instances, key=lambda g: g.instance_id)),
                frame_triplets=tuple(sorted(frame_triplets)),
            )
        )
    records.sort(key=lambda r: r.frame_id)
    return records


def read_ground_truth(gt_dir: str | Path, schema: TripletSchema) -> list[FrameRecord]:
    """Load every ``<video_id>.json`` under a directory, sorted by key."""
    gt_dir = Path(gt_dir)
    if not gt_dir.is_dir():
        raise FileNotFoundError(f"ground truth directory not found: {gt_dir}")
    paths = sorted(gt_dir.glob("*.json"))
    if not paths:
        raise DatasetError(f"{gt_dir}: no video JSON files")
    frames: list[FrameRecord] = []
    for path in paths:
        frames.extend(parse_video_file(path, schema))
    frames.sort(key=lambda r: (r.video_id, r.frame_id))
    return frames


def write_ground_truth(frames: list[FrameRecord], out_dir: str | Path) -> list[Path]:
    """Write frames back into canonical per-video JSON files.

    Canonical means fixed key order, sorted frames, instances, flags and
    frame_triplets, two-space indentation. Reading a canonical file and
    writing it again reproduces it byte for byte.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_video: dict[str, list[FrameRecord]] = {}
    for rec in frames:
        by_video.setdefault(rec.video_id, []).append(rec)
    written = []
    for video_id in sorted(by_video):
        recs = sorted(by_video[video_id], key=lambda r: r.frame_id)
        sizes = {(r.width, r.height) for r in recs}
        if len(sizes) != 1:
            raise DatasetError(
                f"video {video_id}: inconsistent frame sizes {sorted(sizes)}"
            )
        width, height = recs[0].width, recs[0].height
        doc = {
            "video_id": video_id,
            "width": width,
            "height": height,
            "frames": [
                {
                    "frame_id": r.frame_id,
                    "frame_triplets": sorted(r.frame_triplets),
                    "instances": [
                        {
                            "instance_id": g.instance_id,
                            "instrument_id": g.instrument_id,
                            "triplet_id": g.triplet_id,
                            "flags": sorted(g.flags),
                            "mask": g.mask.to_json_dict(),
                        }
                        for g in sorted(r.instances, key=lambda g: g.instance_id)
                    ],
                }
                for r in recs
            ],
        }
        path = out_dir / f"{video_id}.json"
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        written.append(path)
    return written


def _parse_detection(
    obj: Any, locus: str, schema: TripletSchema
) -> DetectionRecord:
    if not isinstance(obj, dict):
        raise DatasetError(f"{locus}: record must be an object")
    video_id = _expect_str(obj.get("video_id"), f"{locus}.video_id")
    frame_id = _expect_int(obj.get("frame_id"), f"{locus}.frame_id")
    triplet_id = _expect_int(obj.get("triplet_id"), f"{locus}.triplet_id")
    if triplet_id not in schema.triplets:
        raise DatasetError(f"{locus}.triplet_id: unknown triplet {triplet_id}")
    score = _expect_number(obj.get("score"), f"{locus}.score")
    if not 0.0 <= score <= 1.0:
        raise DatasetError(f"{locus}.score: {score} outside [0, 1]")
    mask_raw = obj.get("mask")
    mask = None
    if mask_raw is not None:
        try:
            mask = RleMask.from_json_dict(mask_raw)
        except MaskError as exc:
            raise DatasetError(f"{locus}.mask: {exc}") from exc
    bbox_raw = obj.get("bbox")
    bbox = None
    if bbox_raw is not None:
        if (
            not isinstance(bbox_raw, list)
            or len(bbox_raw) != 4
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in bbox_raw)
        ):
            raise DatasetError(f"{locus}.bbox: must be [x, y, w, h] integers")
        try:
            bbox = BBox(*bbox_raw)
        except MaskError as exc:
            raise DatasetError(f"{locus}.bbox: {exc}") from exc
    if mask is None and bbox is None:
        raise DatasetError(f"{locus}: needs a mask or a bbox")
    return DetectionRecord(
        video_id=video_id,
        frame_id=frame_id,
        triplet_id=triplet_id,
        score=score,
        mask=mask,
        bbox=bbox,
    )


def _parse_recognition(
    obj: Any, locus: str, n_classes: int
) -> RecognitionRecord:
    if not isinstance(obj, dict):
        raise DatasetError(f"{locus}: record must be an object")
    video_id = _expect_str(obj.get("video_id"), f"{locus}.video_id")
    frame_id = _expect_int(obj.get("frame_id"), f"{locus}.frame_id")
    scores_raw = obj.get("scores")
    if not isinstance(scores_raw, list) or len(scores_raw) != n_classes:
        raise DatasetError(
            f"{locus}.scores: expected exactly {n_classes} scores"
        )
    scores = []
    for s_idx, s in enumerate(scores_raw):
        value = _expect_number(s, f"{locus}.scores[{s_idx}]")
        if not 0.0 <= value <= 1.0:
            raise DatasetError(f"{locus}.scores[{s_idx}]: {value} outside [0, 1]")
        scores.append(value)
    return RecognitionRecord(
        video_id=video_id, frame_id=frame_id, scores=tuple(scores)
    )


def read_predictions(
    path: str | Path, mode: str, schema: TripletSchema
) -> list[DetectionRecord] | list[RecognitionRecord]:
    """Load a prediction file for the given evaluation mode."""
    if mode not in ("seg", "det", "rec"):
        raise DatasetError(f"unknown mode {mode!r}")
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError:
        raise
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, list):
        raise DatasetError(f"{path}: top level must be an array of records")

    if mode == "rec":
        records_r: list[RecognitionRecord] = []
        seen: set[tuple[str, int]] = set()
        for idx, obj in enumerate(doc):
            rec = _parse_recognition(obj, f"{path}[{idx}]", schema.n_triplets)
            key = (rec.video_id, rec.frame_id)
            if key in seen:
                raise DatasetError(
                    f"{path}[{idx}]: duplicate record for frame {key}"
                )
            seen.add(key)
            records_r.append(rec)
        return records_r

    records_d: list[DetectionRecord] = []
    for idx, obj in enumerate(doc):
        records_d.append(_parse_detection(obj, f"{path}[{idx}]", schema))
    return records_d


def dataset_stats(frames: list[FrameRecord], schema: TripletSchema) -> StatsSummary:
    """Count frames, instances, and grounded triplets, with histograms."""
    per_video: dict[str, dict[str, int]] = {}
    hists: dict[str, Counter] = {c: Counter() for c in ("i", "v", "t", "ivt")}
    n_instances = 0
    n_grounded = 0
    for rec in frames:
        vid = per_video.setdefault(
            rec.video_id, {"frames": 0, "instances": 0, "grounded_triplets": 0}
        )
        vid["frames"] += 1
        vid["instances"] += len(rec.instances)
        n_instances += len(rec.instances)
        for g in rec.instances:
            if g.triplet_id is None:
                continue
            n_grounded += 1
            vid["grounded_triplets"] += 1
            for comp in ("i", "v", "t", "ivt"):
                hists[comp][schema.project(g.triplet_id, comp)] += 1
    return StatsSummary(
        n_frames=len(frames),
        n_instances=n_instances,
        n_grounded=n_grounded,
        per_video=per_video,
        histograms={c: dict(h) for c, h in hists.items()},
    )
