"""Fuse a frame-level triplet label stream with an instance mask stream.

Frames from the two streams are joined on (video_id, frame_id). Within a
joined frame, labels and instances are grouped by instrument class; a
label is auto-assigned to an instance only when the match is unique in
both directions (one candidate instance, one candidate label). Every
other situation is recorded in an ambiguity report for manual resolution
rather than guessed at.
"""

from __future__ import annotations

import csv
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from .dataset_io import FrameRecord, GroundedInstance, parse_video_file
from .errors import AlignmentError, DatasetError
from .masks import RleMask
from .schema import TripletSchema

AMBIGUITY_KINDS = (
    "MultiInstanceOneTriplet",
    "MultiTripletOneInstance",
    "TripletWithoutInstance",
    "InstanceWithoutTriplet",
    "FrameMissingInOneSource",
)


@dataclass(frozen=True)
class TripletLabelFrame:
    """Frame-level labels: a multiset of triplet ids."""

    video_id: str
    frame_id: int
    triplets: tuple[int, ...]


@dataclass(frozen=True)
class InstanceMaskFrame:
    """Instrument instances of one frame, without triplet assignments."""

    video_id: str
    frame_id: int
    width: int
    height: int
    instances: tuple[tuple[int, int, RleMask], ...]  # (instance_id, instrument_id, mask)


@dataclass(frozen=True)
class AmbiguityEntry:
    video_id: str
    frame_id: int
    kind: str
    detail: str

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "video_id": self.video_id,
            "frame_id": self.frame_id,
            "kind": self.kind,
            "detail": self.detail,
        }


@dataclass(frozen=True)
class AmbiguityReport:
    entries: tuple[AmbiguityEntry, ...]

    def counts(self) -> dict[str, int]:
        c = Counter(e.kind for e in self.entries)
        return {kind: c.get(kind, 0) for kind in AMBIGUITY_KINDS}


def read_label_stream(path: str | Path) -> list[TripletLabelFrame]:
    """Read a label CSV with columns video_id, frame_id, triplet_id."""
    path = Path(path)
    grouped: dict[tuple[str, int], list[int]] = {}
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty label file") from None
        if [h.strip() for h in header] != ["video_id", "frame_id", "triplet_id"]:
            raise DatasetError(
                f"{path}: bad header, expected video_id,frame_id,triplet_id"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise DatasetError(f"{path}:{lineno}: expected 3 fields")
            video_id = row[0].strip()
            try:
                frame_id = int(row[1])
                triplet_id = int(row[2])
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: non-integer field") from None
            grouped.setdefault((video_id, frame_id), []).append(triplet_id)
    return [
        TripletLabelFrame(video_id=v, frame_id=f, triplets=tuple(sorted(ts)))
        for (v, f), ts in sorted(grouped.items())
    ]


def read_mask_stream(
    mask_dir: str | Path, schema: TripletSchema
) -> list[InstanceMaskFrame]:
    """Read per-video instance files (GT shape, triplet_id absent)."""
    mask_dir = Path(mask_dir)
    if not mask_dir.is_dir():
        raise FileNotFoundError(f"mask stream directory not found: {mask_dir}")
    paths = sorted(mask_dir.glob("*.json"))
    if not paths:
        raise DatasetError(f"{mask_dir}: no video JSON files")
    frames: list[InstanceMaskFrame] = []
    for path in paths:
        for rec in parse_video_file(path, schema, require_triplet_field=False):
            for g in rec.instances:
                if g.triplet_id is not None:
                    raise AlignmentError(
                        f"{path}: frame {rec.frame_id} instance {g.instance_id} "
                        f"already carries triplet {g.triplet_id}; mask streams "
                        f"must be unassigned"
                    )
            frames.append(
                InstanceMaskFrame(
                    video_id=rec.video_id,
                    frame_id=rec.frame_id,
                    width=rec.width,
                    height=rec.height,
                    instances=tuple(
                        (g.instance_id, g.instrument_id, g.mask)
                        for g in rec.instances
                    ),
                )
            )
    frames.sort(key=lambda f: (f.video_id, f.frame_id))
    return frames


def _check_stream_order(keys: list[tuple[str, int]], name: str) -> None:
    for prev, cur in zip(keys, keys[1:]):
        if cur < prev:
            raise AlignmentError(
                f"{name} stream not sorted: {cur} after {prev}"
            )
        if cur == prev:
            raise AlignmentError(f"{name} stream has duplicate frame {cur}")


def _align_one_frame(
    labels: TripletLabelFrame,
    masks: InstanceMaskFrame,
    schema: TripletSchema,
) -> tuple[FrameRecord, list[AmbiguityEntry]]:
    video_id, frame_id = masks.video_id, masks.frame_id
    entries: list[AmbiguityEntry] = []

    by_class_labels: dict[int, list[int]] = {}
    for tid in labels.triplets:
        by_class_labels.setdefault(schema.project(tid, "i"), []).append(tid)
    by_class_instances: dict[int, list[tuple[int, int, RleMask]]] = {}
    for inst in masks.instances:
        by_class_instances.setdefault(inst[1], []).append(inst)

    instances_out: list[GroundedInstance] = []
    classes = sorted(set(by_class_labels) | set(by_class_instances))
    for cls in classes:
        tids = by_class_labels.get(cls, [])
        insts = by_class_instances.get(cls, [])
        if not insts:
            for tid in tids:
                entries.append(
                    AmbiguityEntry(
                        video_id, frame_id, "TripletWithoutInstance",
                        f"triplet {tid} ({schema.triplet_name(tid)}) has no "
                        f"instance of instrument {cls}",
                    )
                )
            continue
        if not tids:
            for inst_id, inst_cls, mask in insts:
                entries.append(
                    AmbiguityEntry(
                        video_id, frame_id, "InstanceWithoutTriplet",
                        f"instance {inst_id} of instrument {inst_cls} has no "
                        f"candidate triplet",
                    )
                )
                instances_out.append(
                    GroundedInstance(
                        instance_id=inst_id,
                        instrument_id=inst_cls,
                        triplet_id=None,
                        mask=mask,
                        flags=frozenset({"unmatched"}),
                    )
                )
            continue
        if len(insts) == 1 and len(tids) == 1:
            inst_id, inst_cls, mask = insts[0]
            instances_out.append(
                GroundedInstance(
                    instance_id=inst_id,
                    instrument_id=inst_cls,
                    triplet_id=tids[0],
                    mask=mask,
                    flags=frozenset(),
                )
            )
            continue
        if len(insts) > 1:
            # several instances compete for the labels of this class;
            # no assignment regardless of how many labels there are
            for tid in tids:
                entries.append(
                    AmbiguityEntry(
                        video_id, frame_id, "MultiInstanceOneTriplet",
                        f"triplet {tid} ({schema.triplet_name(tid)}) has "
                        f"{len(insts)} candidate instances of instrument {cls}",
                    )
                )
            flag = frozenset({"ambiguous"})
        else:
            # one instance, several candidate labels
            for tid in tids:
                entries.append(
                    AmbiguityEntry(
                        video_id, frame_id, "MultiTripletOneInstance",
                        f"triplet {tid} ({schema.triplet_name(tid)}) is one of "
                        f"{len(tids)} candidates for instance {insts[0][0]}",
                    )
                )
            flag = frozenset({"ambiguous"})
        for inst_id, inst_cls, mask in insts:
            instances_out.append(
                GroundedInstance(
                    instance_id=inst_id,
                    instrument_id=inst_cls,
                    triplet_id=None,
                    mask=mask,
                    flags=flag,
                )
            )

    record = FrameRecord(
        video_id=video_id,
        frame_id=frame_id,
        width=masks.width,
        height=masks.height,
        instances=tuple(sorted(instances_out, key=lambda g: g.instance_id)),
        frame_triplets=tuple(sorted(labels.triplets)),
    )
    return record, entries


def _align_video(
    args: tuple[list[TripletLabelFrame], list[InstanceMaskFrame], TripletSchema],
) -> tuple[list[FrameRecord], list[AmbiguityEntry]]:
    labels, masks, schema = args
    label_map = {f.frame_id: f for f in labels}
    mask_map = {f.frame_id: f for f in masks}
    records: list[FrameRecord] = []
    entries: list[AmbiguityEntry] = []
    for frame_id in sorted(set(label_map) | set(mask_map)):
        lab = label_map.get(frame_id)
        msk = mask_map.get(frame_id)
        if lab is None or msk is None:
            present = lab if lab is not None else msk
            missing_side = "mask" if msk is None else "label"
            entries.append(
                AmbiguityEntry(
                    present.video_id, frame_id, "FrameMissingInOneSource",
                    f"frame absent from the {missing_side} stream",
                )
            )
            continue
        record, frame_entries = _align_one_frame(lab, msk, schema)
        records.append(record)
        entries.extend(frame_entries)
    return records, entries


def align_frames(
    labels: list[TripletLabelFrame],
    masks: list[InstanceMaskFrame],
    schema: TripletSchema,
    jobs: int = 1,
) -> tuple[list[FrameRecord], AmbiguityReport]:
    """Join the two streams and auto-assign unique bipartite matches.

    Frames present in only one stream produce report entries and no
    output record. With ``jobs > 1`` videos are aligned in parallel; the
    merge is sorted, so the result is identical for any worker count.
    """
    _check_stream_order([(f.video_id, f.frame_id) for f in labels], "label")
    _check_stream_order([(f.video_id, f.frame_id) for f in masks], "mask")

    videos = sorted(
        {f.video_id for f in labels} | {f.video_id for f in masks}
    )
    tasks = []
    for vid in videos:
        tasks.append(
            (
                [f for f in labels if f.video_id == vid],
                [f for f in masks if f.video_id == vid],
                schema,
            )
        )
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_align_video, tasks))
    else:
        results = [_align_video(t) for t in tasks]

    records: list[FrameRecord] = []
    entries: list[AmbiguityEntry] = []
    for recs, ents in results:
        records.extend(recs)
        entries.extend(ents)
    records.sort(key=lambda r: (r.video_id, r.frame_id))
    entries.sort(key=lambda e: (e.video_id, e.frame_id, e.kind, e.detail))
    return records, AmbiguityReport(entries=tuple(entries))


def alignment_stats(
    report: AmbiguityReport, frames: Iterable[FrameRecord]
) -> dict[str, Any]:
    """Assignment rate and per-kind counts for an alignment run.

    The rate denominator is every triplet label seen on a matched frame:
    assigned ones plus the three label-side ambiguity categories.
    """
    counts = report.counts()

    def _bucket(per_video: dict[str, dict[str, int]], vid: str) -> dict[str, int]:
        return per_video.setdefault(
            vid, {"assigned": 0, **dict.fromkeys(AMBIGUITY_KINDS, 0)}
        )

    per_video: dict[str, dict[str, int]] = {}
    assigned = 0
    for r in frames:
        n = sum(1 for g in r.instances if g.triplet_id is not None)
        if n:
            _bucket(per_video, r.video_id)["assigned"] += n
            assigned += n
    for e in report.entries:
        _bucket(per_video, e.video_id)[e.kind] += 1
    blocked = (
        counts["MultiInstanceOneTriplet"]
        + counts["MultiTripletOneInstance"]
        + counts["TripletWithoutInstance"]
    )
    total = assigned + blocked
    return {
        "assigned": assigned,
        "total_labels_on_matched_frames": total,
        "assignment_rate": assigned / total if total else 1.0,
        "counts": counts,
        "per_video": dict(sorted(per_video.items())),
    }
