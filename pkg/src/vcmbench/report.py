"""Report emission: BDR tables, curve data, and minimal SVG plots.

All exports are deterministic for fixed input: stable key order, BDR
percentages at 2 decimals, metric values at 4 decimals, rates at full
float precision (so re-ingested curve CSVs reproduce the BDR). Quality
metrics (PSNR, VMAF) are reference-free, so dual-mode tables render their
pseudo-GT and diff columns as "-".

SVG output is dependency-free smoke plotting (axes, polylines, legend);
publication plotting belongs to the CSV exports.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .bd_metrics import BdResult, FitKind, RdCurve, bd_diff, bd_rate
from .datamodel import DataError, GtMode
from .orchestrator import QUALITY_KINDS, ResultStore, assemble_curve

BDR_DECIMALS = 2
VALUE_DECIMALS = 4

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


@dataclass(frozen=True)
class BdrRow:
    """One metric's BDR under each GT mode plus their difference."""

    label: str
    true_bdr: Optional[float] = None
    pseudo_bdr: Optional[float] = None
    diff: Optional[float] = None
    fit_kind: Optional[FitKind] = None
    note: Optional[str] = None

    def __post_init__(self):
        has_both = self.true_bdr is not None and self.pseudo_bdr is not None
        if (self.diff is not None) != has_both:
            raise DataError("diff must be present exactly when both BDRs are")


@dataclass(frozen=True)
class BdrTable:
    """True/pseudo/diff BDR rows for one anchor-vs-test codec comparison."""

    anchor_id: str
    test_id: str
    qp_ladder: tuple
    modes: tuple
    rows: tuple


def _fmt_bdr(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.{BDR_DECIMALS}f}"


def _rendered_diff_note(row: BdrRow) -> Optional[str]:
    """Footnote when rounding makes the rendered diff disagree with rendered BDRs."""
    if row.diff is None:
        return None
    rendered = round(round(row.true_bdr, BDR_DECIMALS) - round(row.pseudo_bdr, BDR_DECIMALS), BDR_DECIMALS)
    if abs(rendered - round(row.diff, BDR_DECIMALS)) > 10 ** (-BDR_DECIMALS) / 2:
        return f"rendered columns differ by {rendered:.{BDR_DECIMALS}f} due to rounding"
    return None


def build_bdr_table(
    store: ResultStore,
    anchor_id: str,
    test_id: str,
    metric_ids: Sequence[str],
    modes: Sequence[GtMode],
    fit: Optional[FitKind] = None,
    monotonicity: str = "strict",
) -> BdrTable:
    """BDR of ``test`` over ``anchor`` per metric, per requested GT mode.

    Curve-assembly or fit errors do not abort the table; the affected row
    carries the error text instead of values.
    """
    modes = tuple(GtMode(m) for m in modes)
    manifest = store.read_manifest()
    rows = []
    for metric_id in metric_ids:
        kind = next(
            (m["kind"] for m in manifest["metrics"] if m["metric_id"] == metric_id), None
        )
        if kind is None:
            raise DataError(f"metric_id {metric_id!r} not in store manifest")
        # reference-free metrics are mode-independent; report them once
        row_modes = (GtMode.TRUE_GT,) if kind in QUALITY_KINDS and len(modes) > 1 else modes
        results = {}
        note = None
        fit_used = None
        for mode in row_modes:
            mode_key = mode if kind not in QUALITY_KINDS or mode in manifest["gt_modes"] else modes[0]
            try:
                anchor_curve = assemble_curve(store, anchor_id, metric_id, mode_key)
                test_curve = assemble_curve(store, test_id, metric_id, mode_key)
                result = bd_rate(anchor_curve, test_curve, kind=fit, monotonicity=monotonicity)
                results[mode] = result
                fit_used = result.fit_kind
                if result.diagnostics:
                    note = "; ".join(result.diagnostics)
            except (ValueError, KeyError) as exc:
                note = f"{mode.value}: {exc}"
        true_res = results.get(GtMode.TRUE_GT)
        pseudo_res = results.get(GtMode.PSEUDO_GT)
        diff = bd_diff(true_res, pseudo_res) if true_res and pseudo_res else None
        row = BdrRow(
            label=metric_id,
            true_bdr=true_res.bd_rate_percent if true_res else None,
            pseudo_bdr=pseudo_res.bd_rate_percent if pseudo_res else None,
            diff=diff,
            fit_kind=fit_used,
            note=note,
        )
        rounding_note = _rendered_diff_note(row)
        if rounding_note:
            row = BdrRow(
                label=row.label,
                true_bdr=row.true_bdr,
                pseudo_bdr=row.pseudo_bdr,
                diff=row.diff,
                fit_kind=row.fit_kind,
                note=f"{row.note}; {rounding_note}" if row.note else rounding_note,
            )
        rows.append(row)
    return BdrTable(
        anchor_id=anchor_id,
        test_id=test_id,
        qp_ladder=tuple(manifest["qp_ladder"]),
        modes=modes,
        rows=tuple(rows),
    )


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def _table_csv(table: BdrTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "true_gt_bdr_percent", "pseudo_gt_bdr_percent", "diff_pp", "fit", "note"])
    for row in table.rows:
        writer.writerow(
            [
                row.label,
                _fmt_bdr(row.true_bdr),
                _fmt_bdr(row.pseudo_bdr),
                _fmt_bdr(row.diff),
                row.fit_kind.value if row.fit_kind else "-",
                row.note or "",
            ]
        )
    return buf.getvalue()


def _table_json(table: BdrTable) -> str:
    obj = {
        "anchor_id": table.anchor_id,
        "test_id": table.test_id,
        "qp_ladder": list(table.qp_ladder),
        "modes": [m.value for m in table.modes],
        "rows": [
            {
                "label": r.label,
                "true_gt_bdr_percent": None if r.true_bdr is None else round(r.true_bdr, BDR_DECIMALS),
                "pseudo_gt_bdr_percent": None if r.pseudo_bdr is None else round(r.pseudo_bdr, BDR_DECIMALS),
                "diff_pp": None if r.diff is None else round(r.diff, BDR_DECIMALS),
                "fit_kind": r.fit_kind.value if r.fit_kind else None,
                "note": r.note,
            }
            for r in table.rows
        ],
    }
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _table_svg(table: BdrTable) -> str:
    header = ["metric", "true GT", "pseudo GT", "diff"]
    lines = [
        f'<text x="{20 + 130 * i}" y="30" font-weight="bold" font-family="monospace" font-size="13">{h}</text>'
        for i, h in enumerate(header)
    ]
    for r, row in enumerate(table.rows):
        cells = [row.label, _fmt_bdr(row.true_bdr), _fmt_bdr(row.pseudo_bdr), _fmt_bdr(row.diff)]
        for c, cell in enumerate(cells):
            lines.append(
                f'<text x="{20 + 130 * c}" y="{55 + 22 * r}" font-family="monospace" font-size="13">{cell}</text>'
            )
    height = 70 + 22 * len(table.rows)
    body = "\n".join(lines)
    title = f"BDR of {table.test_id} over {table.anchor_id} [%], QP {list(table.qp_ladder)}"
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="560" height="{height}">\n'
        f'<text x="20" y="12" font-family="monospace" font-size="12">{title}</text>\n'
        f"{body}\n</svg>\n"
    )


def _curve_csv(curve: RdCurve) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["qp", "rate", "value"])
    qps = curve.qps if curve.qps is not None else [0] * len(curve.points)
    for qp, (rate, value) in zip(qps, curve.points):
        writer.writerow([qp, repr(rate), f"{value:.{VALUE_DECIMALS}f}"])
    return buf.getvalue()


def _curves_json(curves: Sequence[RdCurve]) -> str:
    obj = [
        {
            "codec_id": c.codec_id,
            "metric_id": c.metric_id,
            "gt_mode": c.gt_mode.value if c.gt_mode else None,
            "rate_unit": c.rate_unit,
            "qps": list(c.qps) if c.qps else None,
            "points": [[rate, round(value, VALUE_DECIMALS)] for rate, value in c.points],
        }
        for c in curves
    ]
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _curve_label(curve: RdCurve) -> str:
    mode = f" ({curve.gt_mode.value})" if curve.gt_mode else ""
    return f"{curve.codec_id} {curve.metric_id}{mode}"


def plot_curves_svg(curves: Sequence[RdCurve], width: int = 640, height: int = 440) -> str:
    """One polyline per curve over a linear rate axis, with legend and axis labels."""
    if not curves:
        raise DataError("nothing to plot")
    margin_l, margin_r, margin_t, margin_b = 60, 20, 20, 45
    xs = [r for c in curves for r, _ in c.points]
    ys = [v for c in curves for _, v in c.points]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    x_span = (x1 - x0) or 1.0
    y_span = (y1 - y0) or 1.0

    def sx(x):
        return margin_l + (x - x0) / x_span * (width - margin_l - margin_r)

    def sy(y):
        return height - margin_b - (y - y0) / y_span * (height - margin_t - margin_b)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin_l}" y1="{height - margin_b}" x2="{width - margin_r}" '
        f'y2="{height - margin_b}" stroke="black"/>',
        f'<line x1="{margin_l}" y1="{margin_t}" x2="{margin_l}" y2="{height - margin_b}" stroke="black"/>',
        f'<text x="{(margin_l + width - margin_r) / 2:.0f}" y="{height - 10}" text-anchor="middle" '
        f'font-family="monospace" font-size="13">rate [{curves[0].rate_unit}]</text>',
        f'<text x="15" y="{(margin_t + height - margin_b) / 2:.0f}" text-anchor="middle" '
        f'font-family="monospace" font-size="13" '
        f'transform="rotate(-90 15 {(margin_t + height - margin_b) / 2:.0f})">{curves[0].metric_id}</text>',
        f'<text x="{margin_l}" y="{height - margin_b + 16}" font-family="monospace" font-size="11">{x0:.4g}</text>',
        f'<text x="{width - margin_r - 40}" y="{height - margin_b + 16}" font-family="monospace" font-size="11">{x1:.4g}</text>',
        f'<text x="{margin_l - 8}" y="{height - margin_b}" text-anchor="end" font-family="monospace" font-size="11">{y0:.4g}</text>',
        f'<text x="{margin_l - 8}" y="{margin_t + 10}" text-anchor="end" font-family="monospace" font-size="11">{y1:.4g}</text>',
    ]
    for i, curve in enumerate(curves):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{sx(r):.2f},{sy(v):.2f}" for r, v in curve.points)
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = margin_t + 16 * (i + 1)
        parts.append(
            f'<line x1="{width - margin_r - 150}" y1="{ly}" x2="{width - margin_r - 130}" '
            f'y2="{ly}" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{width - margin_r - 125}" y="{ly + 4}" font-family="monospace" '
            f'font-size="11">{_curve_label(curve)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _poc_csv(points) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["poc", "value"])
    for poc, value in points:
        writer.writerow([poc, f"{value:.{VALUE_DECIMALS}f}"])
    return buf.getvalue()


def export(obj, path, fmt: str) -> Path:
    """Write a table, curve, curve list, or POC point list; deterministic bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt not in ("csv", "json", "svg"):
        raise DataError(f"unknown export format {fmt!r}")
    if isinstance(obj, BdrTable):
        text = {"csv": _table_csv, "json": _table_json, "svg": _table_svg}[fmt](obj)
    elif isinstance(obj, RdCurve):
        if fmt == "csv":
            text = _curve_csv(obj)
        elif fmt == "json":
            text = _curves_json([obj])
        else:
            text = plot_curves_svg([obj])
    elif isinstance(obj, (list, tuple)) and obj and isinstance(obj[0], RdCurve):
        if fmt == "csv":
            raise DataError("multi-curve CSV is one file per curve; export each separately")
        text = _curves_json(obj) if fmt == "json" else plot_curves_svg(obj)
    elif isinstance(obj, (list, tuple)):
        if fmt != "csv":
            text = json.dumps([[p, round(v, VALUE_DECIMALS)] for p, v in obj], indent=2) + "\n"
        else:
            text = _poc_csv(obj)
    else:
        raise DataError(f"cannot export object of type {type(obj).__name__}")
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc
    return path
