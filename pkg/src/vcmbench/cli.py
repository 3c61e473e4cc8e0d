"""Command-line entry point for batch use.

Subcommands compose through the filesystem (each stage reads the previous
one's outputs), so the expensive codec stage can be run once and metrics
or reports iterated on. Exit codes: 0 success, 1 evaluation failures,
2 configuration errors. Diagnostics go to stderr; machine-readable
results go to files (the lone exception is ``bdrate``, which prints its
percentage).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, report, synthetic
from .bd_metrics import (
    FitError,
    FitKind,
    MonotonicityError,
    OverlapError,
    bd_rate,
    read_curve_csv,
    write_result_json,
)
from .codec_adapter import ConfigurationError
from .datamodel import DataError, GtMode
from .orchestrator import (
    ExperimentPlan,
    PlanError,
    ResultStore,
    TraceRecorder,
    _check_inputs,
    _ensure_predictions,
    _needed_models,
    encode_all,
    load_plan,
    run,
)
from .pseudo_gt import materialize_pseudo_gt

log = logging.getLogger("vcmbench")

EXIT_OK = 0
EXIT_EVAL_FAILURE = 1
EXIT_CONFIG = 2

_CONFIG_ERRORS = (PlanError, ConfigurationError, DataError, FitError, MonotonicityError, OverlapError)

OVERRIDE_KEYS = {"qp_ladder", "gt_modes", "score_threshold", "fps", "metrics"}

_GT_MODE_CHOICES = {"true": ["true_gt"], "pseudo": ["pseudo_gt"], "both": ["true_gt", "pseudo_gt"]}
_FIT_CHOICES = {"cubic": FitKind.CUBIC_POLY, "pchip": FitKind.PCHIP, "auto": None}


def _apply_overrides(plan_obj: dict, overrides, gt_mode: str | None, score_threshold) -> dict:
    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise PlanError(f"override must be key=value, got {item!r}")
        if key not in OVERRIDE_KEYS:
            raise PlanError(f"unknown override key {key!r}; allowed: {sorted(OVERRIDE_KEYS)}")
        if key == "qp_ladder":
            plan_obj[key] = [int(v) for v in value.split(",")]
        elif key == "gt_modes":
            plan_obj[key] = value.split(",")
        elif key in ("score_threshold", "fps"):
            if key == "fps":
                plan_obj.setdefault("dataset", {})["fps"] = float(value)
            else:
                plan_obj[key] = float(value)
        elif key == "metrics":
            plan_obj[key] = json.loads(value)
    if gt_mode:
        plan_obj["gt_modes"] = _GT_MODE_CHOICES[gt_mode]
    if score_threshold is not None:
        plan_obj["score_threshold"] = score_threshold
    return plan_obj


def _load_plan_with_overrides(args) -> ExperimentPlan:
    from .orchestrator import plan_from_dict

    plan_path = Path(args.plan)
    if not plan_path.is_file():
        raise PlanError(f"plan file not found: {plan_path}")
    try:
        obj = json.loads(plan_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise PlanError(f"malformed plan JSON in {plan_path}: {exc}") from exc
    obj = _apply_overrides(
        obj,
        getattr(args, "set", None),
        getattr(args, "gt_mode", None),
        getattr(args, "score_threshold", None),
    )
    return plan_from_dict(obj, plan_path.parent)


def _cmd_validate(args) -> int:
    plan = _load_plan_with_overrides(args)
    _check_inputs(plan)
    print(
        f"plan OK: {len(plan.dataset.frames)} frames, {len(plan.codecs)} codecs, "
        f"QP {list(plan.qp_ladder)}, {len(plan.metrics)} metrics, "
        f"modes {[m.value for m in plan.gt_modes]} (hash {plan.plan_hash})",
        file=sys.stderr,
    )
    return EXIT_OK


def _cmd_encode(args) -> int:
    plan = _load_plan_with_overrides(args)
    _check_inputs(plan)
    results, errors = encode_all(plan, Path(args.workdir), jobs=args.jobs)
    for (codec_id, qp), payload in sorted(results.items()):
        print(
            f"encoded {codec_id} qp={qp}: {payload['bitstream_bytes']} bytes",
            file=sys.stderr,
        )
    for (codec_id, qp), error in sorted(errors.items()):
        print(f"FAILED {codec_id} qp={qp}: {error}", file=sys.stderr)
    return EXIT_EVAL_FAILURE if errors else EXIT_OK


def _cmd_pseudo_gt(args) -> int:
    plan = _load_plan_with_overrides(args)
    workdir = Path(args.workdir)
    for model_id in _needed_models(plan):
        source = plan.predictions[model_id]
        _ensure_predictions(
            plan, source, "pristine", plan.dataset.frames[0].image_path.parent, workdir
        )
        out = materialize_pseudo_gt(
            plan.dataset.frames,
            source.variant_dir("pristine"),
            workdir,
            model_id,
            source.task,
            score_threshold=plan.score_threshold,
            class_count=plan.dataset.class_count_semantic,
            ignore_id=plan.dataset.ignore_id,
        )
        print(f"pseudo GT for {model_id} -> {out}", file=sys.stderr)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    plan = _load_plan_with_overrides(args)
    store = run(plan, Path(args.workdir), jobs=args.jobs)
    stats = store.run_stats
    print(
        f"evaluated: {stats.computed} computed, {stats.cached} cached, "
        f"{len(stats.failed)} failed (store {store.root})",
        file=sys.stderr,
    )
    for cell, error in stats.failed:
        print(f"FAILED {cell}: {error}", file=sys.stderr)
    return EXIT_EVAL_FAILURE if stats.failed else EXIT_OK


def _cmd_bdrate(args) -> int:
    anchor = read_curve_csv(args.anchor)
    test = read_curve_csv(args.test)
    result = bd_rate(anchor, test, kind=_FIT_CHOICES[args.fit], monotonicity=args.monotonicity)
    print(f"{result.bd_rate_percent:.2f} %")
    for diag in result.diagnostics:
        print(f"note: {diag}", file=sys.stderr)
    if args.out:
        write_result_json(result, args.out)
        print(f"wrote {args.out}", file=sys.stderr)
    return EXIT_OK


def _store_for(plan: ExperimentPlan, workdir: Path) -> ResultStore:
    root = workdir / "results" / plan.plan_hash
    if not (root / "manifest.json").is_file():
        raise PlanError(f"no evaluation results under {root}; run `vcm-bench evaluate` first")
    return ResultStore(root)


def _export_report(store, plan, anchor_id, test_id, out_dir, fit, monotonicity) -> None:
    table = report.build_bdr_table(
        store,
        anchor_id,
        test_id,
        [m.metric_id for m in plan.metrics],
        plan.gt_modes,
        fit=fit,
        monotonicity=monotonicity,
    )
    for fmt in ("csv", "json", "svg"):
        report.export(table, out_dir / f"bdr_table.{fmt}", fmt)
    for metric in plan.metrics:
        curves = []
        for codec in plan.codecs:
            modes = (GtMode.TRUE_GT,) if metric.kind in ("psnr", "vmaf") else plan.gt_modes
            for mode in modes:
                if metric.kind in ("psnr", "vmaf") and mode not in plan.gt_modes:
                    mode = plan.gt_modes[0]
                from .orchestrator import assemble_curve

                curve = assemble_curve(store, codec.codec_id, metric.metric_id, mode)
                curves.append(curve)
                name = f"{metric.metric_id}_{codec.codec_id}_{GtMode(mode).value}".replace(":", "-")
                report.export(curve, out_dir / "curves" / f"{name}.csv", "csv")
        report.export(
            curves, out_dir / "curves" / f"{metric.metric_id}.svg".replace(":", "-"), "svg"
        )


def _cmd_report(args) -> int:
    plan = _load_plan_with_overrides(args)
    workdir = Path(args.workdir)
    store = _store_for(plan, workdir)
    out_dir = Path(args.out) if args.out else workdir / "report"
    anchor_id = args.anchor or plan.codecs[0].codec_id
    test_id = args.test or plan.codecs[-1].codec_id
    _export_report(
        store, plan, anchor_id, test_id, out_dir, _FIT_CHOICES[args.fit], args.monotonicity
    )
    if args.poc_metric:
        if args.gt_mode not in ("true", "pseudo"):
            raise PlanError("--poc-metric needs --gt-mode true or pseudo")
        from .orchestrator import per_poc_curve

        points = per_poc_curve(
            store,
            test_id,
            args.poc_qp,
            args.poc_metric,
            gt_mode=_GT_MODE_CHOICES[args.gt_mode][0],
        )
        report.export(points, out_dir / f"poc_{args.poc_metric.replace(':', '-')}.csv", "csv")
    print(f"report written to {out_dir}", file=sys.stderr)
    return EXIT_OK


def _cmd_demo(args) -> int:
    workdir = Path(args.workdir)
    plan_path = synthetic.prepare_demo(workdir, qp_ladder=tuple(args.qp_ladder))
    args.plan = plan_path
    plan = _load_plan_with_overrides(args)
    trace = TraceRecorder()
    store = run(plan, workdir, jobs=args.jobs, trace=trace)
    stats = store.run_stats
    if stats.failed:
        for cell, error in stats.failed:
            print(f"FAILED {cell}: {error}", file=sys.stderr)
        return EXIT_EVAL_FAILURE
    if len(plan.gt_modes) == 2:
        seq_true = [op for _, op in trace.sequence(GtMode.TRUE_GT)]
        seq_pseudo = [op for _, op in trace.sequence(GtMode.PSEUDO_GT)]
        if seq_true != seq_pseudo:
            print("mode symmetry violated: operation sequences differ", file=sys.stderr)
            return EXIT_EVAL_FAILURE
        print(
            f"mode symmetry OK: {len(seq_true)} identical operations per mode", file=sys.stderr
        )
    out_dir = workdir / "report"
    _export_report(
        store,
        plan,
        synthetic.DEMO_ANCHOR_CODEC,
        synthetic.DEMO_TEST_CODEC,
        out_dir,
        _FIT_CHOICES[args.fit],
        args.monotonicity,
    )
    print(
        f"demo complete: {stats.computed} computed, {stats.cached} cached; "
        f"report under {out_dir}",
        file=sys.stderr,
    )
    return EXIT_OK


def _add_common(parser, plan_required: bool = True, workdir: bool = True):
    if plan_required:
        parser.add_argument("--plan", required=True, help="experiment plan JSON file")
    if workdir:
        parser.add_argument("--workdir", required=True, help="working directory for artifacts")
    parser.add_argument("--jobs", type=int, default=None, help="worker count (default: cores)")
    parser.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help=f"plan override, one of {sorted(OVERRIDE_KEYS)}",
    )
    parser.add_argument(
        "--gt-mode", choices=sorted(_GT_MODE_CHOICES), default=None, help="restrict GT modes"
    )
    parser.add_argument(
        "--score-threshold",
        type=float,
        default=None,
        help="instance pseudo-GT score threshold override",
    )


def _add_fit_flags(parser):
    parser.add_argument(
        "--fit",
        choices=sorted(_FIT_CHOICES),
        default="auto",
        help="BD interpolation backend (auto: cubic for 4-point ladders, else pchip)",
    )
    parser.add_argument(
        "--monotonicity",
        choices=["strict", "prune"],
        default="strict",
        help="how to treat non-monotone rate-performance curves",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vcm-bench",
        description="evaluation harness for video coding for machines "
        "(task metrics, pseudo ground truth, BD-rate)",
    )
    parser.add_argument("--version", action="version", version=f"vcm-bench {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more log output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a plan and its input files")
    _add_common(p, workdir=False)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("encode", help="run the codec stage for every (codec, QP)")
    _add_common(p)
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("pseudo-gt", help="materialize pseudo ground truth from pristine predictions")
    _add_common(p)
    p.set_defaults(func=_cmd_pseudo_gt)

    p = sub.add_parser("evaluate", help="fill the full evaluation matrix (cached)")
    _add_common(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("bdrate", help="BD-rate between two curve CSV files (qp,rate,value)")
    p.add_argument("--anchor", required=True, help="anchor curve CSV")
    p.add_argument("--test", required=True, help="test curve CSV")
    p.add_argument("--out", default=None, help="write the result JSON here")
    _add_fit_flags(p)
    p.set_defaults(func=_cmd_bdrate)

    p = sub.add_parser("report", help="emit BDR tables and curve exports from stored results")
    _add_common(p)
    p.add_argument("--anchor", default=None, help="anchor codec_id (default: first in plan)")
    p.add_argument("--test", default=None, help="test codec_id (default: last in plan)")
    p.add_argument("--out", default=None, help="output directory (default: <workdir>/report)")
    p.add_argument("--poc-metric", default=None, help="also export a per-POC curve for this metric_id")
    p.add_argument("--poc-qp", type=int, default=22, help="QP for the per-POC export")
    _add_fit_flags(p)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("demo", help="self-contained mock-codec end-to-end run")
    _add_common(p, plan_required=False)
    p.add_argument(
        "--qp-ladder",
        type=int,
        nargs="+",
        default=[22, 27, 32, 37],
        help="QP ladder for the demo run",
    )
    _add_fit_flags(p)
    p.set_defaults(func=_cmd_demo)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "jobs", None) is None:
        import os

        args.jobs = os.cpu_count() or 1
    try:
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
