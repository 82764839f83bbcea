"""Command-line entry point.

Subcommands: validate, align, stats, eval, compare, fusion-check. All
structured output is JSON written to files or stdout; human summaries go
to stdout, diagnostics to stderr. Exit codes: 0 success, 1 domain or
validation error, 2 I/O or environment error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import alignment, dataset_io, evaluation, fusion, stats
from .errors import TripletSegError
from .schema import COMPONENTS, load_schema

log = logging.getLogger("tripletseg")


def _add_schema_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--schema", metavar="CSV", default=None,
        help="triplet vocabulary CSV (default: packaged 100-triplet vocabulary)",
    )


def _parse_components(raw: str) -> tuple[str, ...]:
    comps = tuple(c.strip().lower() for c in raw.split(",") if c.strip())
    for c in comps:
        if c not in COMPONENTS:
            raise TripletSegError(
                f"unknown component {c!r}; choose from {', '.join(COMPONENTS)}"
            )
    if not comps:
        raise TripletSegError("no components given")
    return comps


def _write_json(path: str | Path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def _cmd_validate(args: argparse.Namespace) -> int:
    schema = load_schema(args.schema)
    gt_dir = Path(args.gt)
    if not gt_dir.is_dir():
        raise FileNotFoundError(f"ground truth directory not found: {gt_dir}")
    paths = sorted(gt_dir.glob("*.json"))
    if not paths:
        print(f"{gt_dir}: no video JSON files", file=sys.stderr)
        return 1
    errors = 0
    n_frames = 0
    for path in paths:
        try:
            frames = dataset_io.parse_video_file(path, schema)
        except TripletSegError as exc:
            print(f"{exc}", file=sys.stderr)
            errors += 1
            continue
        n_frames += len(frames)
        print(f"{path.name}: ok ({len(frames)} frames)")
    print(f"{len(paths)} files, {n_frames} frames, {errors} errors")
    return 0 if errors == 0 else 1


def _cmd_align(args: argparse.Namespace) -> int:
    schema = load_schema(args.schema)
    labels = alignment.read_label_stream(args.labels)
    masks = alignment.read_mask_stream(args.masks, schema)
    frames, report = alignment.align_frames(labels, masks, schema, jobs=args.jobs)
    written = dataset_io.write_ground_truth(frames, args.out)
    if args.report:
        _write_json(args.report, [e.to_json_dict() for e in report.entries])
    summary = alignment.alignment_stats(report, frames)
    print(
        f"aligned {len(frames)} frames into {len(written)} video files "
        f"under {args.out}"
    )
    print(
        f"assigned {summary['assigned']} of "
        f"{summary['total_labels_on_matched_frames']} triplet labels "
        f"(rate {summary['assignment_rate']:.4f})"
    )
    for kind, count in summary["counts"].items():
        print(f"  {kind}: {count}")
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    schema = load_schema(args.schema)
    frames = dataset_io.read_ground_truth(args.gt, schema)
    summary = dataset_io.dataset_stats(frames, schema)
    print(summary.render_text())
    if args.json_out:
        _write_json(args.json_out, summary.to_json_dict())
    return 0


def _build_eval_config(args: argparse.Namespace) -> evaluation.EvalConfig:
    return evaluation.EvalConfig(
        mode=args.mode,
        iou_threshold=args.iou_threshold,
        components=_parse_components(args.components),
        averaging=args.averaging,
        ap_method=args.ap_method,
        jobs=args.jobs,
    )


def _cmd_eval(args: argparse.Namespace) -> int:
    schema = load_schema(args.schema)
    config = _build_eval_config(args)
    frames = dataset_io.read_ground_truth(args.gt, schema)
    preds = dataset_io.read_predictions(args.preds, args.mode, schema)
    report = evaluation.evaluate(frames, preds, config, schema)
    print(report.render_table())
    if args.out:
        _write_json(args.out, report.to_json_dict())
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    values_form = args.values_a is not None or args.values_b is not None
    pipeline_form = any(
        getattr(args, name) is not None for name in ("gt", "preds_a", "preds_b")
    )
    if values_form and pipeline_form:
        raise TripletSegError(
            "give either --values-a/--values-b or --gt/--preds-a/--preds-b, not both"
        )

    if values_form:
        if args.values_a is None or args.values_b is None:
            raise TripletSegError("both --values-a and --values-b are required")
        series = []
        for path in (args.values_a, args.values_b):
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
            if not isinstance(doc, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in doc
            ):
                raise TripletSegError(f"{path}: expected a JSON array of numbers")
            series.append([float(v) for v in doc])
        values_a, values_b = series
        metric = f"mAP_{args.metric.upper()}"
        n_subsets = len(values_a)
        subset_size = None
        seed = None
    else:
        for name in ("gt", "preds_a", "preds_b"):
            if getattr(args, name) is None:
                raise TripletSegError(f"--{name.replace('_', '-')} is required")
        schema = load_schema(args.schema)
        component = args.metric.lower()
        if component not in COMPONENTS:
            raise TripletSegError(
                f"unknown metric component {args.metric!r}; "
                f"choose from {', '.join(COMPONENTS)}"
            )
        config = evaluation.EvalConfig(
            mode=args.mode,
            iou_threshold=args.iou_threshold,
            components=(component,),
            averaging=args.averaging,
            ap_method=args.ap_method,
            jobs=args.jobs,
        )
        frames = dataset_io.read_ground_truth(args.gt, schema)
        preds_a = dataset_io.read_predictions(args.preds_a, args.mode, schema)
        preds_b = dataset_io.read_predictions(args.preds_b, args.mode, schema)
        frame_keys = [(r.video_id, r.frame_id) for r in frames]
        partition = stats.partition_frames(
            frame_keys, args.n_subsets, args.subset_size, args.seed
        )
        values_a, values_b = [], []
        for subset in partition.subsets:
            subset_keys = set(subset)
            rep_a = evaluation.evaluate_subset(
                frames, preds_a, subset_keys, config, schema
            )
            rep_b = evaluation.evaluate_subset(
                frames, preds_b, subset_keys, config, schema
            )
            values_a.append(rep_a.components[component].mAP)
            values_b.append(rep_b.components[component].mAP)
        metric = f"mAP_{evaluation.COMPONENT_LABELS[component]}_{args.mode}"
        n_subsets = args.n_subsets
        subset_size = args.subset_size
        seed = args.seed

    result = stats.compare_methods(values_a, values_b)
    payload = {
        "metric": metric,
        "n_subsets": n_subsets,
        "subset_size": subset_size,
        "seed": seed,
        "per_subset": [{"a": a, "b": b} for a, b in result.per_subset],
        "wilcoxon": result.wilcoxon.to_json_dict(),
    }
    print(result.render_text())
    if args.out:
        _write_json(args.out, payload)
    else:
        print(json.dumps(payload, indent=2))
    return 0


def _cmd_fusion_check(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    d = args.d
    params = fusion.FusionParams.random(d, args.tissue_classes, rng)
    queries = rng.standard_normal((args.queries, d))
    logits = rng.standard_normal((args.height, args.width, args.tissue_classes))

    checks: list[tuple[str, bool]] = []

    features = fusion.encode_anatomy(logits, params.anatomy_proj, args.levels)
    _, weights = fusion.attention(queries, features, params, return_weights=True)
    row_err = float(np.abs(weights.sum(axis=1) - 1.0).max())
    checks.append((f"softmax rows sum to 1 (max err {row_err:.2e})", row_err <= 1e-12))

    identical = np.array_equal(
        fusion.gated_fusion(queries, np.zeros_like(queries),
                            params.gate_weight, params.gate_bias),
        queries,
    )
    checks.append(("zero context leaves queries untouched", identical))

    context = fusion.attention(queries, features, params)
    half = fusion.gated_fusion(
        queries, context, np.zeros((d, d)), np.zeros(d)
    )
    half_err = float(np.abs(half - (queries + 0.5 * context)).max())
    checks.append(
        (f"zero gate params give half-strength residual (max err {half_err:.2e})",
         half_err <= 1e-15)
    )

    saturated = fusion.gated_fusion(
        queries, context, np.zeros((d, d)), np.full(d, -20.0)
    )
    sat_bound = 2.1e-9 * float(np.abs(context).max())
    sat_err = float(np.abs(saturated - queries).max())
    checks.append(
        (f"saturated gate suppresses the residual (max delta {sat_err:.2e})",
         sat_err <= sat_bound)
    )

    perm = rng.permutation(args.queries)
    out = fusion.fusion_forward(queries, logits, params, args.levels)
    out_perm = fusion.fusion_forward(queries[perm], logits, params, args.levels)
    checks.append(
        ("permuting queries permutes outputs", np.array_equal(out[perm], out_perm))
    )

    report = fusion.grad_check(params, queries, logits, args.levels)
    checks.append(
        (f"analytic gradients match finite differences "
         f"(worst block {max(report.block_errors.values()):.2e})", report.passed)
    )

    control = fusion.grad_check(
        params, queries, logits, args.levels, corrupt="gate_weight"
    )
    checks.append(
        ("corrupted gradient is flagged by the check", not control.passed)
    )

    all_ok = True
    for label, ok in checks:
        print(f"{'pass' if ok else 'FAIL'}  {label}")
        all_ok = all_ok and ok
    print(report.render_text())
    if args.json_out:
        _write_json(args.json_out, {
            "seed": args.seed,
            "checks": {label: ok for label, ok in checks},
            "grad_check": report.to_json_dict(),
        })
    return 0 if all_ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tripletseg",
        description=(
            "Construct, validate, and evaluate instance-grounded surgical "
            "action triplet datasets."
        ),
    )
    parser.add_argument(
        "-v", "--verbose", action="count", default=0,
        help="increase log verbosity (repeatable)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a ground-truth directory")
    p.add_argument("--gt", required=True, metavar="DIR")
    _add_schema_flag(p)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser(
        "align",
        help="fuse a triplet label stream with an instance mask stream",
    )
    p.add_argument("--labels", required=True, metavar="CSV",
                   help="label stream: video_id,frame_id,triplet_id rows")
    p.add_argument("--masks", required=True, metavar="DIR",
                   help="mask stream: per-video JSON without triplet ids")
    p.add_argument("--out", required=True, metavar="DIR",
                   help="output ground-truth directory")
    p.add_argument("--report", metavar="JSON",
                   help="write the ambiguity report here")
    p.add_argument("--jobs", type=int, default=1, metavar="N")
    _add_schema_flag(p)
    p.set_defaults(func=_cmd_align)

    p = sub.add_parser("stats", help="dataset summary counts")
    p.add_argument("--gt", required=True, metavar="DIR")
    p.add_argument("--json-out", metavar="JSON")
    _add_schema_flag(p)
    p.set_defaults(func=_cmd_stats)

    def add_eval_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--mode", required=True, choices=("seg", "det", "rec"))
        p.add_argument("--iou-threshold", type=float, default=0.5, metavar="T")
        p.add_argument("--components", default=",".join(COMPONENTS),
                       help="comma-separated subset of i,v,t,iv,it,ivt")
        p.add_argument("--averaging", choices=("pooled", "per_video"),
                       default="pooled")
        p.add_argument("--ap-method", choices=("envelope", "step"), default=None,
                       help="default: envelope for seg/det, step for rec")
        p.add_argument("--jobs", type=int, default=1, metavar="N")

    p = sub.add_parser("eval", help="evaluate predictions against ground truth")
    p.add_argument("--gt", required=True, metavar="DIR")
    p.add_argument("--preds", required=True, metavar="JSON")
    add_eval_flags(p)
    p.add_argument("--out", metavar="JSON", help="write the report here")
    _add_schema_flag(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser(
        "compare",
        help="paired subset comparison of two methods (one-sided Wilcoxon)",
    )
    p.add_argument("--gt", metavar="DIR")
    p.add_argument("--preds-a", metavar="JSON")
    p.add_argument("--preds-b", metavar="JSON")
    p.add_argument("--mode", choices=("seg", "det", "rec"), default="seg")
    p.add_argument("--metric", default="ivt",
                   help="component whose mAP is compared (default ivt)")
    p.add_argument("--n-subsets", type=int, default=12, metavar="N")
    p.add_argument("--subset-size", type=int, default=500, metavar="N")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iou-threshold", type=float, default=0.5, metavar="T")
    p.add_argument("--averaging", choices=("pooled", "per_video"), default="pooled")
    p.add_argument("--ap-method", choices=("envelope", "step"), default=None)
    p.add_argument("--jobs", type=int, default=1, metavar="N")
    p.add_argument("--values-a", metavar="JSON",
                   help="precomputed per-subset metric values for method a")
    p.add_argument("--values-b", metavar="JSON",
                   help="precomputed per-subset metric values for method b")
    p.add_argument("--out", metavar="JSON", help="write the comparison here")
    _add_schema_flag(p)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser(
        "fusion-check",
        help="run the gated cross-attention invariant and gradient suite",
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d", type=int, default=8, help="channel dimension")
    p.add_argument("--queries", type=int, default=4)
    p.add_argument("--height", type=int, default=4)
    p.add_argument("--width", type=int, default=4)
    p.add_argument("--tissue-classes", type=int, default=6)
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--json-out", metavar="JSON")
    p.set_defaults(func=_cmd_fusion_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except TripletSegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # never panic to the shell
        log.exception("unexpected failure")
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
