from __future__ import annotations

import json

import numpy as np
import pytest

from synth import micro_instance, rect_rle
from tripletseg.dataset_io import (
    DetectionRecord,
    FrameRecord,
    GroundedInstance,
    dataset_stats,
    parse_video_file,
    read_ground_truth,
    read_predictions,
    write_ground_truth,
)
from tripletseg.errors import DatasetError


def _video_doc(schema):
    """Two-frame video over an 8x6 grid; triplet 0 is instrument 0."""
    h, w = 8, 6
    mask_a = rect_rle(h, w, 1, 1, 3, 2).to_json_dict()
    mask_b = rect_rle(h, w, 4, 3, 2, 2).to_json_dict()
    tid = 0
    instrument = schema.project(tid, "i")
    return {
        "video_id": "vid0",
        "width": w,
        "height": h,
        "frames": [
            {
                "frame_id": 3,
                "frame_triplets": [tid, 50],
                "instances": [
                    {
                        "instance_id": 0,
                        "instrument_id": instrument,
                        "triplet_id": tid,
                        "flags": [],
                        "mask": mask_a,
                    },
                    {
                        "instance_id": 1,
                        "instrument_id": 2,
                        "triplet_id": None,
                        "flags": ["unmatched"],
                        "mask": mask_b,
                    },
                ],
            },
            {"frame_id": 1, "frame_triplets": [], "instances": []},
        ],
    }


@pytest.fixture()
def gt_dir(tmp_path, schema):
    doc = _video_doc(schema)
    (tmp_path / "vid0.json").write_text(json.dumps(doc), encoding="utf-8")
    doc2 = {
        "video_id": "vid1",
        "width": 6,
        "height": 8,
        "frames": [{"frame_id": 0, "frame_triplets": [], "instances": []}],
    }
    (tmp_path / "vid1.json").write_text(json.dumps(doc2), encoding="utf-8")
    return tmp_path


def test_read_ground_truth_sorted(gt_dir, schema):
    frames = read_ground_truth(gt_dir, schema)
    assert [(r.video_id, r.frame_id) for r in frames] == [
        ("vid0", 1), ("vid0", 3), ("vid1", 0)
    ]
    rec = frames[1]
    assert rec.width == 6 and rec.height == 8
    assert rec.frame_triplets == (0, 50)
    assert rec.instances[0].triplet_id == 0
    assert rec.instances[1].flags == frozenset({"unmatched"})


def test_missing_directory_is_oserror(tmp_path, schema):
    with pytest.raises(FileNotFoundError):
        read_ground_truth(tmp_path / "nope", schema)


def test_instrument_triplet_consistency_error(tmp_path, schema):
    doc = _video_doc(schema)
    doc["frames"][0]["instances"][0]["instrument_id"] = 5
    (tmp_path / "vid0.json").write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(DatasetError, match=r"instances\[0\].*instrument"):
        read_ground_truth(tmp_path, schema)


def test_bad_mask_error_names_instance(tmp_path, schema):
    doc = _video_doc(schema)
    doc["frames"][0]["instances"][1]["mask"]["counts"] = [5, 5]
    (tmp_path / "vid0.json").write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(DatasetError, match=r"instances\[1\]\.mask"):
        read_ground_truth(tmp_path, schema)


def test_duplicate_instance_id_rejected(tmp_path, schema):
    doc = _video_doc(schema)
    doc["frames"][0]["instances"][1]["instance_id"] = 0
    (tmp_path / "vid0.json").write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(DatasetError, match="duplicate instance_id"):
        read_ground_truth(tmp_path, schema)


def test_frame_triplets_superset_enforced(tmp_path, schema):
    doc = _video_doc(schema)
    doc["frames"][0]["frame_triplets"] = [50]
    (tmp_path / "vid0.json").write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(DatasetError, match="absent from"):
        read_ground_truth(tmp_path, schema)


def test_video_id_must_match_filename(tmp_path, schema):
    doc = _video_doc(schema)
    (tmp_path / "other.json").write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(DatasetError, match="does not match file name"):
        read_ground_truth(tmp_path, schema)


def test_empty_mask_rejected(tmp_path, schema):
    doc = _video_doc(schema)
    doc["frames"][0]["instances"][0]["mask"] = {"size": [8, 6], "counts": [48]}
    (tmp_path / "vid0.json").write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(DatasetError, match="empty mask"):
        read_ground_truth(tmp_path, schema)


def test_mask_size_must_match_frame(tmp_path, schema):
    doc = _video_doc(schema)
    doc["frames"][0]["instances"][0]["mask"] = {"size": [4, 6], "counts": [0, 24]}
    (tmp_path / "vid0.json").write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(DatasetError, match="does not match frame"):
        read_ground_truth(tmp_path, schema)


def test_write_read_round_trip_byte_stable(tmp_path, gt_dir, schema):
    frames = read_ground_truth(gt_dir, schema)
    out1 = tmp_path / "out1"
    out2 = tmp_path / "out2"
    write_ground_truth(frames, out1)
    frames2 = read_ground_truth(out1, schema)
    assert frames2 == frames
    write_ground_truth(frames2, out2)
    for path1 in sorted(out1.glob("*.json")):
        path2 = out2 / path1.name
        assert path1.read_bytes() == path2.read_bytes()


def test_read_predictions_seg(tmp_path, schema):
    mask = rect_rle(8, 6, 0, 0, 2, 2).to_json_dict()
    doc = [
        {"video_id": "v", "frame_id": 0, "triplet_id": 3, "score": 0.5,
         "mask": mask, "bbox": None},
        {"video_id": "v", "frame_id": 1, "triplet_id": 5, "score": 1.0,
         "mask": mask, "bbox": [0, 0, 2, 2]},
    ]
    path = tmp_path / "preds.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    records = read_predictions(path, "seg", schema)
    assert len(records) == 2
    assert records[0].mask is not None and records[0].bbox is None
    assert records[1].bbox is not None


def test_read_predictions_bbox_only_det(tmp_path, schema):
    doc = [{"video_id": "v", "frame_id": 0, "triplet_id": 3, "score": 0.5,
            "mask": None, "bbox": [1, 2, 3, 4]}]
    path = tmp_path / "preds.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    records = read_predictions(path, "det", schema)
    assert records[0].mask is None
    assert (records[0].bbox.x, records[0].bbox.y) == (1, 2)


def test_read_predictions_requires_geometry(tmp_path, schema):
    doc = [{"video_id": "v", "frame_id": 0, "triplet_id": 3, "score": 0.5,
            "mask": None, "bbox": None}]
    path = tmp_path / "preds.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(DatasetError, match="mask or a bbox"):
        read_predictions(path, "det", schema)


def test_read_predictions_score_range(tmp_path, schema):
    doc = [{"video_id": "v", "frame_id": 0, "triplet_id": 3, "score": 1.5,
            "mask": None, "bbox": [0, 0, 1, 1]}]
    path = tmp_path / "preds.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(DatasetError, match="outside"):
        read_predictions(path, "det", schema)


def test_read_predictions_rec(tmp_path, schema):
    scores = [0.0] * schema.n_triplets
    scores[7] = 0.9
    doc = [{"video_id": "v", "frame_id": 0, "scores": scores}]
    path = tmp_path / "rec.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    records = read_predictions(path, "rec", schema)
    assert records[0].scores[7] == 0.9


def test_read_predictions_rec_duplicate(tmp_path, schema):
    scores = [0.0] * schema.n_triplets
    doc = [
        {"video_id": "v", "frame_id": 0, "scores": scores},
        {"video_id": "v", "frame_id": 0, "scores": scores},
    ]
    path = tmp_path / "rec.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(DatasetError, match="duplicate record"):
        read_predictions(path, "rec", schema)


def test_read_predictions_rec_wrong_length(tmp_path, schema):
    doc = [{"video_id": "v", "frame_id": 0, "scores": [0.5] * 99}]
    path = tmp_path / "rec.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(DatasetError, match="exactly 100 scores"):
        read_predictions(path, "rec", schema)


def test_mask_stream_shape_allows_missing_triplet(tmp_path, schema):
    doc = _video_doc(schema)
    for frame in doc["frames"]:
        for inst in frame["instances"]:
            del inst["triplet_id"]
        frame["frame_triplets"] = []
    path = tmp_path / "vid0.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(DatasetError, match="missing triplet_id"):
        parse_video_file(path, schema)
    frames = parse_video_file(path, schema, require_triplet_field=False)
    assert all(g.triplet_id is None for r in frames for g in r.instances)


def test_dataset_stats_counts(gt_dir, schema):
    frames = read_ground_truth(gt_dir, schema)
    summary = dataset_stats(frames, schema)
    assert summary.n_frames == 3
    assert summary.n_instances == 2
    assert summary.n_grounded == 1
    assert summary.per_video["vid0"] == {
        "frames": 2, "instances": 2, "grounded_triplets": 1
    }
    assert summary.histograms["ivt"] == {0: 1}
    assert summary.histograms["i"] == {schema.project(0, "i"): 1}
    assert "3 annotated frames and 1 spatially grounded triplets" in (
        summary.render_text()
    )


def test_dataset_stats_empty(schema):
    summary = dataset_stats([], schema)
    assert summary.n_frames == 0
    assert summary.n_instances == 0
    assert summary.n_grounded == 0
    assert summary.histograms == {"i": {}, "v": {}, "t": {}, "ivt": {}}


def test_dataset_stats_order_invariant(rng, schema):
    frames, _ = micro_instance(rng, schema)
    a = dataset_stats(frames, schema)
    b = dataset_stats(list(reversed(frames)), schema)
    assert a.n_frames == b.n_frames
    assert a.n_instances == b.n_instances
    assert a.n_grounded == b.n_grounded
    assert a.histograms == b.histograms


def test_detection_record_validation_via_file(tmp_path, schema):
    doc = [{"video_id": "v", "frame_id": 0, "triplet_id": 999, "score": 0.5,
            "mask": None, "bbox": [0, 0, 1, 1]}]
    path = tmp_path / "preds.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(DatasetError, match="unknown triplet"):
        read_predictions(path, "det", schema)
