"""Evaluation protocol: matching, average precision, component decomposition.

Three modes share one report shape. Segmentation and detection modes match
scored predictions to ground-truth instances per frame (mask IoU or box
IoU at a threshold) and score each component class by average precision.
Recognition mode ranks frame-level class scores against frame-level
labels. Components project the triplet vocabulary onto instrument, verb,
target, the two pairs, and the full triplet space.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .dataset_io import DetectionRecord, FrameRecord, RecognitionRecord
from .errors import EvaluationError
from .masks import BBox, RleMask, box_iou, mask_iou, mask_to_bbox
from .schema import COMPONENTS, ComponentKey, TripletSchema

log = logging.getLogger(__name__)

# JSON report spelling of each component
COMPONENT_LABELS = {"i": "I", "v": "V", "t": "T", "iv": "IV", "it": "IT", "ivt": "IVT"}

FrameKey = tuple[str, int]


@dataclass(frozen=True)
class EvalConfig:
    """Evaluation settings; ``ap_method=None`` picks the mode's default
    (monotone precision envelope for seg/det, raw step sum for rec)."""

    mode: str
    iou_threshold: float = 0.5
    components: tuple[str, ...] = COMPONENTS
    averaging: str = "pooled"
    ap_method: str | None = None
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.mode not in ("seg", "det", "rec"):
            raise EvaluationError(f"unknown mode {self.mode!r}")
        if not 0.0 < self.iou_threshold <= 1.0:
            raise EvaluationError(
                f"iou_threshold {self.iou_threshold} outside (0, 1]"
            )
        if not self.components:
            raise EvaluationError("components must be non-empty")
        for comp in self.components:
            if comp not in COMPONENTS:
                raise EvaluationError(f"unknown component {comp!r}")
        if self.averaging not in ("pooled", "per_video"):
            raise EvaluationError(f"unknown averaging {self.averaging!r}")
        if self.ap_method not in (None, "envelope", "step"):
            raise EvaluationError(f"unknown ap_method {self.ap_method!r}")
        if self.jobs < 1:
            raise EvaluationError("jobs must be at least 1")

    @property
    def resolved_ap_method(self) -> str:
        if self.ap_method is not None:
            return self.ap_method
        return "step" if self.mode == "rec" else "envelope"


@dataclass(frozen=True)
class ComponentResult:
    """Scores of one component: mAP is the mean of per-class APs, ×100."""

    mAP: float
    per_class: dict[ComponentKey, float] = field(repr=False)
    gt_count: int = 0
    pred_count: int = 0


@dataclass(frozen=True)
class EvalReport:
    mode: str
    iou_threshold: float
    averaging: str
    ap_method: str
    frame_count: int
    components: dict[str, ComponentResult] = field(repr=False)

    def to_json_dict(self) -> dict[str, Any]:
        def class_key(key: ComponentKey) -> str:
            if isinstance(key, tuple):
                return ",".join(str(k) for k in key)
            return str(key)

        return {
            "mode": self.mode,
            "iou_threshold": self.iou_threshold,
            "averaging": self.averaging,
            "ap_method": self.ap_method,
            "frame_count": self.frame_count,
            "components": {
                COMPONENT_LABELS[comp]: {
                    "mAP": res.mAP,
                    "per_class": {
                        class_key(k): v for k, v in sorted(
                            res.per_class.items(),
                            key=lambda kv: (kv[0],) if isinstance(kv[0], int) else kv[0],
                        )
                    },
                    "gt_count": res.gt_count,
                    "pred_count": res.pred_count,
                }
                for comp, res in self.components.items()
            },
        }

    def render_table(self) -> str:
        header = [f"mAP_{COMPONENT_LABELS[c]}" for c in COMPONENTS]
        cells = []
        for comp in COMPONENTS:
            res = self.components.get(comp)
            cells.append("-" if res is None else f"{res.mAP:.2f}")
        widths = [max(len(h), len(c)) for h, c in zip(header, cells)]
        line1 = "  ".join(h.rjust(w) for h, w in zip(header, widths))
        line2 = "  ".join(c.rjust(w) for c, w in zip(cells, widths))
        meta = (
            f"mode={self.mode} iou={self.iou_threshold:g} "
            f"averaging={self.averaging} ap={self.ap_method} "
            f"frames={self.frame_count}"
        )
        return f"{meta}\n{line1}\n{line2}"


def match_frame(
    preds: Sequence[tuple[float, Any]],
    gts: Sequence[Any],
    iou_threshold: float,
    iou_fn,
) -> list[bool]:
    """Greedy one-to-one matching of score-sorted predictions to GT.

    ``preds`` must already be sorted by descending score (ties resolved by
    input order). Each prediction takes the unmatched ground truth with
    the highest IoU at or above the threshold; IoU ties go to the lowest
    GT index.
    """
    matrix = np.zeros((len(preds), len(gts)), dtype=np.float64)
    for p_idx, (_, p_geom) in enumerate(preds):
        for g_idx, g_geom in enumerate(gts):
            matrix[p_idx, g_idx] = iou_fn(p_geom, g_geom)
    return _match_from_matrix(matrix, iou_threshold)


def _match_from_matrix(matrix: np.ndarray, iou_threshold: float) -> list[bool]:
    n_preds, n_gts = matrix.shape
    taken = np.zeros(n_gts, dtype=bool)
    flags = []
    for p_idx in range(n_preds):
        best_g = -1
        best_iou = 0.0
        for g_idx in range(n_gts):
            if taken[g_idx]:
                continue
            iou = matrix[p_idx, g_idx]
            if iou >= iou_threshold and iou > best_iou:
                best_iou = iou
                best_g = g_idx
        if best_g >= 0:
            taken[best_g] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def average_precision(
    scored_flags: Sequence[tuple[float, bool]], gt_count: int, method: str
) -> float:
    """AP in [0, 1] from (score, is_true_positive) pairs.

    ``envelope`` integrates the monotone precision envelope (detection
    convention); ``step`` sums raw precision at each recall increment
    (classification convention). Classes without ground truth cannot be
    scored and must be excluded before calling.
    """
    if method not in ("envelope", "step"):
        raise EvaluationError(f"unknown AP method {method!r}")
    if gt_count < 1:
        raise EvaluationError("average precision needs at least one GT item")
    if not scored_flags:
        return 0.0
    scores = np.array([s for s, _ in scored_flags], dtype=np.float64)
    flags = np.array([f for _, f in scored_flags], dtype=bool)
    order = np.argsort(-scores, kind="stable")
    tp = flags[order]
    tp_cum = np.cumsum(tp, dtype=np.float64)
    precision = tp_cum / np.arange(1, len(tp) + 1, dtype=np.float64)
    if method == "envelope":
        precision = np.maximum.accumulate(precision[::-1])[::-1]
    # recall rises by exactly 1/gt_count at each true positive
    return float(precision[tp].sum() / gt_count)


def project_detections(
    dets: Sequence[DetectionRecord], component: str, schema: TripletSchema
) -> list[tuple[ComponentKey, DetectionRecord]]:
    """Relabel detections by component class. No deduplication: duplicate
    component detections stay and are penalized by one-to-one matching."""
    return [(schema.project(d.triplet_id, component), d) for d in dets]


def _pred_geometry(det: DetectionRecord, mode: str) -> RleMask | BBox:
    if mode == "seg":
        if det.mask is None:
            raise EvaluationError(
                f"seg mode requires masks on all predictions; "
                f"({det.video_id}, {det.frame_id}) triplet {det.triplet_id} "
                f"has none"
            )
        return det.mask
    if det.bbox is not None:
        return det.bbox
    return mask_to_bbox(det.mask)


# One frame of matching work: GT and predictions already reduced to
# (triplet_id, geometry) and (triplet_id, score, geometry).
_FrameTask = tuple[
    FrameKey,
    list[tuple[int, Any]],
    list[tuple[int, float, Any]],
]


def _match_one_frame(
    task: _FrameTask,
    components: tuple[str, ...],
    iou_threshold: float,
    mode: str,
    schema: TripletSchema,
) -> dict[tuple[str, ComponentKey], tuple[list[float], list[bool], int]]:
    """Match every component class of one frame against one shared IoU
    matrix, computed once per (prediction, GT) pair."""
    _, gts, preds = task
    iou_fn = mask_iou if mode == "seg" else box_iou
    matrix = np.zeros((len(preds), len(gts)), dtype=np.float64)
    for p_idx, (_, _, p_geom) in enumerate(preds):
        for g_idx, (_, g_geom) in enumerate(gts):
            matrix[p_idx, g_idx] = iou_fn(p_geom, g_geom)

    out: dict[tuple[str, ComponentKey], tuple[list[float], list[bool], int]] = {}
    for comp in components:
        gt_keys = [schema.project(tid, comp) for tid, _ in gts]
        pred_keys = [schema.project(tid, comp) for tid, _, _ in preds]
        for key in sorted(set(gt_keys) | set(pred_keys),
                          key=lambda k: (k,) if isinstance(k, int) else k):
            g_idx = [i for i, k in enumerate(gt_keys) if k == key]
            p_idx = [i for i, k in enumerate(pred_keys) if k == key]
            # stable: ties on score keep input order
            p_idx.sort(key=lambda i: (-preds[i][1], i))
            flags = _match_from_matrix(
                matrix[np.ix_(p_idx, g_idx)], iou_threshold
            )
            out[(comp, key)] = (
                [preds[i][1] for i in p_idx],
                flags,
                len(g_idx),
            )
    return out


def _match_chunk(args):
    tasks, components, iou_threshold, mode, schema = args
    return [
        _match_one_frame(t, components, iou_threshold, mode, schema)
        for t in tasks
    ]


def _class_ap(
    frames_data: list[tuple[str, list[float], list[bool], int]],
    averaging: str,
    method: str,
) -> float | None:
    """AP of one class from per-frame (video, scores, flags, n_gt) rows.

    Pooled: one ranking over all frames. Per-video: AP per video holding
    ground truth of the class, then the mean over those videos. Returns
    None when the class has no ground truth anywhere.
    """
    if averaging == "pooled":
        gt_count = sum(n for _, _, _, n in frames_data)
        if gt_count == 0:
            return None
        pooled = [
            (s, f)
            for _, scores, flags, _ in frames_data
            for s, f in zip(scores, flags)
        ]
        return average_precision(pooled, gt_count, method)
    by_video: dict[str, list[tuple[str, list[float], list[bool], int]]] = {}
    for row in frames_data:
        by_video.setdefault(row[0], []).append(row)
    video_aps = []
    for vid in sorted(by_video):
        rows = by_video[vid]
        gt_count = sum(n for _, _, _, n in rows)
        if gt_count == 0:
            continue
        pooled = [
            (s, f) for _, scores, flags, _ in rows for s, f in zip(scores, flags)
        ]
        video_aps.append(average_precision(pooled, gt_count, method))
    if not video_aps:
        return None
    return float(np.mean(video_aps))


def evaluate_grounded(
    gt_frames: Sequence[FrameRecord],
    preds: Sequence[DetectionRecord],
    config: EvalConfig,
    schema: TripletSchema,
) -> EvalReport:
    """Instance-grounded evaluation (seg or det mode).

    Ground truth consists of the grounded instances (those carrying a
    triplet assignment). Predictions on frames absent from the ground
    truth are warned about and scored as false positives in their stated
    frame. With ``config.jobs > 1`` frames are matched in parallel; the
    merge order is fixed, so reports are identical for any worker count.
    """
    if config.mode not in ("seg", "det"):
        raise EvaluationError(f"evaluate_grounded cannot run mode {config.mode!r}")

    gt_by_frame: dict[FrameKey, list[tuple[int, Any]]] = {}
    for rec in gt_frames:
        key = (rec.video_id, rec.frame_id)
        items = []
        for g in rec.instances:
            if g.triplet_id is None:
                continue
            geom = g.mask if config.mode == "seg" else mask_to_bbox(g.mask)
            items.append((g.triplet_id, geom))
        gt_by_frame[key] = items

    preds_by_frame: dict[FrameKey, list[tuple[int, float, Any]]] = {}
    unknown: set[FrameKey] = set()
    for det in preds:
        key = (det.video_id, det.frame_id)
        if key not in gt_by_frame:
            unknown.add(key)
        preds_by_frame.setdefault(key, []).append(
            (det.triplet_id, det.score, _pred_geometry(det, config.mode))
        )
    if unknown:
        sample = sorted(unknown)[:5]
        log.warning(
            "%d predicted frame(s) absent from ground truth (e.g. %s); "
            "their predictions score as false positives",
            len(unknown), sample,
        )

    all_keys = sorted(set(gt_by_frame) | set(preds_by_frame))
    tasks: list[_FrameTask] = [
        (key, gt_by_frame.get(key, []), preds_by_frame.get(key, []))
        for key in all_keys
    ]

    if config.jobs > 1 and len(tasks) > 1:
        n_chunks = min(len(tasks), config.jobs * 4)
        bounds = np.linspace(0, len(tasks), n_chunks + 1).astype(int)
        chunks = [
            (
                tasks[bounds[c]:bounds[c + 1]],
                config.components,
                config.iou_threshold,
                config.mode,
                schema,
            )
            for c in range(n_chunks)
            if bounds[c] < bounds[c + 1]
        ]
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            chunk_results = list(pool.map(_match_chunk, chunks))
        frame_results = [r for chunk in chunk_results for r in chunk]
    else:
        frame_results = [
            _match_one_frame(
                t, config.components, config.iou_threshold, config.mode, schema
            )
            for t in tasks
        ]

    # merge per-frame match results in frame-key order
    merged: dict[tuple[str, ComponentKey], list[tuple[str, list[float], list[bool], int]]] = {}
    for key, result in zip(all_keys, frame_results):
        for comp_key, (scores, flags, n_gt) in result.items():
            merged.setdefault(comp_key, []).append((key[0], scores, flags, n_gt))

    method = config.resolved_ap_method
    total_gt = sum(len(items) for items in gt_by_frame.values())
    components: dict[str, ComponentResult] = {}
    for comp in config.components:
        per_class: dict[ComponentKey, float] = {}
        for (c, class_key), frames_data in merged.items():
            if c != comp:
                continue
            ap = _class_ap(frames_data, config.averaging, method)
            if ap is not None:
                per_class[class_key] = ap * 100.0
        m_ap = float(np.mean(list(per_class.values()))) if per_class else 0.0
        components[comp] = ComponentResult(
            mAP=m_ap,
            per_class=per_class,
            gt_count=total_gt,
            pred_count=len(preds),
        )

    return EvalReport(
        mode=config.mode,
        iou_threshold=config.iou_threshold,
        averaging=config.averaging,
        ap_method=method,
        frame_count=len(gt_by_frame),
        components=components,
    )


def evaluate_recognition(
    gt_frames: Sequence[FrameRecord],
    preds: Sequence[RecognitionRecord],
    config: EvalConfig,
    schema: TripletSchema,
) -> EvalReport:
    """Frame-level recognition evaluation.

    A frame's class score is the maximum over the scores of triplets
    projecting to the class; its label is positive iff any frame-level
    triplet projects to the class. Frames without a prediction record
    score zero everywhere; records for unknown frames are warned about
    and ignored.
    """
    if config.mode != "rec":
        raise EvaluationError(f"evaluate_recognition cannot run mode {config.mode!r}")

    keys = [(r.video_id, r.frame_id) for r in gt_frames]
    key_index = {k: i for i, k in enumerate(keys)}
    if len(key_index) != len(keys):
        raise EvaluationError("duplicate (video_id, frame_id) in ground truth")

    scores = np.zeros((len(keys), schema.n_triplets), dtype=np.float64)
    seen: set[FrameKey] = set()
    unknown: set[FrameKey] = set()
    for rec in preds:
        key = (rec.video_id, rec.frame_id)
        if key in seen:
            raise EvaluationError(f"duplicate recognition record for frame {key}")
        seen.add(key)
        idx = key_index.get(key)
        if idx is None:
            unknown.add(key)
            continue
        scores[idx] = rec.scores
    if unknown:
        sample = sorted(unknown)[:5]
        log.warning(
            "%d recognition record(s) for frames absent from ground truth "
            "(e.g. %s); ignored", len(unknown), sample,
        )

    method = config.resolved_ap_method
    videos = [k[0] for k in keys]
    components: dict[str, ComponentResult] = {}
    for comp in config.components:
        # triplet ids projecting to each component class
        members: dict[ComponentKey, list[int]] = {}
        for tid in sorted(schema.triplets):
            members.setdefault(schema.project(tid, comp), []).append(tid)
        positive_sets = [
            {schema.project(t, comp) for t in rec.frame_triplets}
            for rec in gt_frames
        ]

        per_class: dict[ComponentKey, float] = {}
        gt_count = 0
        for class_key in sorted(members, key=lambda k: (k,) if isinstance(k, int) else k):
            tids = members[class_key]
            class_scores = scores[:, tids].max(axis=1)
            labels = np.array(
                [class_key in pos for pos in positive_sets], dtype=bool
            )
            n_pos = int(labels.sum())
            gt_count += n_pos
            if n_pos == 0:
                continue
            frames_data = [
                (videos[i], [float(class_scores[i])], [bool(labels[i])], int(labels[i]))
                for i in range(len(keys))
            ]
            ap = _class_ap(frames_data, config.averaging, method)
            if ap is not None:
                per_class[class_key] = ap * 100.0
        m_ap = float(np.mean(list(per_class.values()))) if per_class else 0.0
        components[comp] = ComponentResult(
            mAP=m_ap,
            per_class=per_class,
            gt_count=gt_count,
            pred_count=len(preds),
        )

    return EvalReport(
        mode="rec",
        iou_threshold=config.iou_threshold,
        averaging=config.averaging,
        ap_method=method,
        frame_count=len(gt_frames),
        components=components,
    )


def evaluate_subset(
    gt_frames: Sequence[FrameRecord],
    preds: Sequence[DetectionRecord] | Sequence[RecognitionRecord],
    frame_subset: set[FrameKey],
    config: EvalConfig,
    schema: TripletSchema,
) -> EvalReport:
    """Evaluation restricted to a subset of ground-truth frames."""
    gt_keys = {(r.video_id, r.frame_id) for r in gt_frames}
    missing = frame_subset - gt_keys
    if missing:
        raise EvaluationError(
            f"subset frames not in ground truth: {sorted(missing)[:5]}"
        )
    sub_gt = [r for r in gt_frames if (r.video_id, r.frame_id) in frame_subset]
    sub_preds = [p for p in preds if (p.video_id, p.frame_id) in frame_subset]
    if config.mode == "rec":
        return evaluate_recognition(sub_gt, sub_preds, config, schema)
    return evaluate_grounded(sub_gt, sub_preds, config, schema)


def evaluate(
    gt_frames: Sequence[FrameRecord],
    preds: Sequence[DetectionRecord] | Sequence[RecognitionRecord],
    config: EvalConfig,
    schema: TripletSchema,
) -> EvalReport:
    """Dispatch to the mode's evaluation function."""
    if config.mode == "rec":
        return evaluate_recognition(gt_frames, preds, config, schema)
    return evaluate_grounded(gt_frames, preds, config, schema)
