"""Bjontegaard Delta Rate between two rate-performance curves.

BDR is computed in the (metric value -> log10 rate) orientation: both
curves are interpolated over the overlapping value range, the log-rate
difference is averaged over that range, and the result is reported as
(10^avg - 1) * 100 percent. Negative means the test codec saves rate at
equal task performance.

Two fit backends are provided: the classic least-squares cubic polynomial
(exact through 4 points, the convention for 4-QP ladders) and a
monotonicity-preserving piecewise cubic Hermite (pchip) for longer
ladders. Both integrate their antiderivatives in closed form; there is no
quadrature error. Curves whose values are not strictly increasing with
rate either fail (policy ``strict``, the default) or are pruned by an
ascending-rate scan that drops every point not above the running maximum
(policy ``prune``); pruning below 4 points demotes a cubic fit to pchip
with a diagnostic.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .datamodel import DataError, GtMode


class FitKind(str, Enum):
    CUBIC_POLY = "cubic_poly"
    PCHIP = "pchip"


class FitError(ValueError):
    """Curve cannot be fitted as requested (too few points, duplicates)."""


class MonotonicityError(ValueError):
    """Metric values are not strictly increasing with rate under strict policy."""


class OverlapError(ValueError):
    """The two curves share no metric-value range."""


@dataclass(frozen=True)
class RdCurve:
    """Ordered (rate, value) points for one (codec, metric, GT-mode) triple.

    Rates must be strictly positive; points are sorted by ascending rate
    on construction. ``qps`` optionally tags each point with the QP that
    produced it.
    """

    points: tuple  # ((rate, value), ...) sorted by rate
    codec_id: str = ""
    metric_id: str = ""
    gt_mode: Optional[GtMode] = None
    rate_unit: str = "bpp"
    qps: Optional[tuple] = None

    def __post_init__(self):
        pts = tuple((float(r), float(v)) for r, v in self.points)
        if len(pts) < 2:
            raise DataError(f"an RD curve needs at least 2 points, got {len(pts)}")
        if any(r <= 0 for r, _ in pts):
            raise DataError("rates must be strictly positive")
        qps = self.qps
        order = sorted(range(len(pts)), key=lambda i: pts[i][0])
        pts = tuple(pts[i] for i in order)
        if qps is not None:
            if len(qps) != len(pts):
                raise DataError("qps must parallel points")
            qps = tuple(int(qps[i]) for i in order)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "qps", qps)
        if self.gt_mode is not None:
            object.__setattr__(self, "gt_mode", GtMode(self.gt_mode))

    @property
    def rates(self) -> np.ndarray:
        return np.array([r for r, _ in self.points])

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.points])


@dataclass(frozen=True)
class BdResult:
    """BDR in percent with the value overlap and fit provenance."""

    bd_rate_percent: float
    overlap: tuple  # (value_low, value_high)
    fit_kind: FitKind
    diagnostics: tuple = ()

    def to_json_obj(self) -> dict:
        return {
            "bd_rate_percent": self.bd_rate_percent,
            "overlap": list(self.overlap),
            "fit_kind": self.fit_kind.value,
            "warnings": list(self.diagnostics),
        }


class _CubicPolyFit:
    """Least-squares cubic through (value, log10 rate); exact for 4 points."""

    def __init__(self, values: np.ndarray, log_rates: np.ndarray):
        self.coeffs = np.polyfit(values, log_rates, 3)
        self._antiderivative = np.polyint(self.coeffs)
        self.domain = (float(values.min()), float(values.max()))

    def __call__(self, value):
        return np.polyval(self.coeffs, value)

    def integrate(self, lo: float, hi: float) -> float:
        return float(np.polyval(self._antiderivative, hi) - np.polyval(self._antiderivative, lo))


class _PchipFit:
    """Monotone piecewise cubic Hermite through (value, log10 rate)."""

    def __init__(self, values: np.ndarray, log_rates: np.ndarray):
        self._interp = PchipInterpolator(values, log_rates)
        self.domain = (float(values.min()), float(values.max()))

    def __call__(self, value):
        return self._interp(value)

    def integrate(self, lo: float, hi: float) -> float:
        return float(self._interp.integrate(lo, hi))


def _monotone_points(curve: RdCurve, monotonicity: str):
    """Return (values, log10 rates, notes) honoring the monotonicity policy."""
    rates = curve.rates
    values = curve.values
    if np.unique(values).size != values.size:
        if monotonicity != "prune":
            raise FitError(f"duplicate metric values in curve {curve.codec_id or '<anon>'}")
    increasing = np.all(np.diff(values) > 0)
    notes = []
    if not increasing:
        if monotonicity == "strict":
            raise MonotonicityError(
                f"metric values not strictly increasing with rate for "
                f"{curve.codec_id or '<anon>'}: {values.tolist()}"
            )
        if monotonicity != "prune":
            raise DataError(f"unknown monotonicity policy {monotonicity!r}")
        keep = [0]
        for i in range(1, len(values)):
            if values[i] > values[keep[-1]]:
                keep.append(i)
        dropped = sorted(set(range(len(values))) - set(keep))
        notes.append(
            f"pruned {len(dropped)} non-monotone point(s) from "
            f"{curve.codec_id or '<anon>'}: indices {dropped}"
        )
        rates = rates[keep]
        values = values[keep]
    return values, np.log10(rates), notes


def fit_log_rate(curve: RdCurve, kind: FitKind, monotonicity: str = "strict"):
    """Fit value -> log10(rate); the returned object is callable and integrates exactly."""
    kind = FitKind(kind)
    values, log_rates, notes = _monotone_points(curve, monotonicity)
    if kind is FitKind.CUBIC_POLY:
        if len(values) < 4:
            raise FitError(f"cubic fit needs >= 4 points, got {len(values)}")
        fit = _CubicPolyFit(values, log_rates)
    else:
        if len(values) < 2:
            raise FitError(f"pchip fit needs >= 2 points, got {len(values)}")
        fit = _PchipFit(values, log_rates)
    fit.notes = tuple(notes)
    return fit


def _resolve_kind(anchor: RdCurve, test: RdCurve, kind) -> FitKind:
    if kind is not None:
        return FitKind(kind)
    # JVET convention: classic cubic for the 4-QP ladders, pchip for longer ones
    if len(anchor.points) == 4 and len(test.points) == 4:
        return FitKind.CUBIC_POLY
    return FitKind.PCHIP


def bd_rate(
    anchor: RdCurve,
    test: RdCurve,
    kind: Optional[FitKind] = None,
    monotonicity: str = "strict",
) -> BdResult:
    """Average rate difference of ``test`` over ``anchor`` at equal metric value.

    Negative results mean the test codec needs less rate for the same task
    performance over the overlapping value range.
    """
    if anchor.metric_id != test.metric_id:
        raise DataError(
            f"metric mismatch: {anchor.metric_id!r} vs {test.metric_id!r}"
        )
    if anchor.gt_mode != test.gt_mode:
        raise DataError(f"GT-mode mismatch: {anchor.gt_mode} vs {test.gt_mode}")
    resolved = _resolve_kind(anchor, test, kind)
    diagnostics = []

    prepared = []
    for curve in (anchor, test):
        values, log_rates, notes = _monotone_points(curve, monotonicity)
        diagnostics.extend(notes)
        prepared.append((values, log_rates))
    if resolved is FitKind.CUBIC_POLY and any(len(v) < 4 for v, _ in prepared):
        diagnostics.append("cubic fit demoted to pchip: fewer than 4 points after pruning")
        resolved = FitKind.PCHIP
    fit_cls = _CubicPolyFit if resolved is FitKind.CUBIC_POLY else _PchipFit
    fits = []
    for values, log_rates in prepared:
        if len(values) < 2:
            raise FitError("fewer than 2 points left after pruning")
        fits.append(fit_cls(values, log_rates))

    lo = max(fit.domain[0] for fit in fits)
    hi = min(fit.domain[1] for fit in fits)
    if not lo < hi:
        raise OverlapError(
            f"no overlapping metric-value range: [{fits[0].domain[0]}, {fits[0].domain[1]}] "
            f"vs [{fits[1].domain[0]}, {fits[1].domain[1]}]"
        )
    avg_log_diff = (fits[1].integrate(lo, hi) - fits[0].integrate(lo, hi)) / (hi - lo)
    return BdResult(
        bd_rate_percent=(10.0 ** avg_log_diff - 1.0) * 100.0,
        overlap=(lo, hi),
        fit_kind=resolved,
        diagnostics=tuple(diagnostics),
    )


def bd_diff(true_result, pseudo_result) -> float:
    """True-GT minus pseudo-GT BDR, in percentage points."""
    true_value = getattr(true_result, "bd_rate_percent", true_result)
    pseudo_value = getattr(pseudo_result, "bd_rate_percent", pseudo_result)
    return float(true_value) - float(pseudo_value)


def read_curve_csv(
    path,
    codec_id: str = "",
    metric_id: str = "",
    gt_mode: Optional[GtMode] = None,
    rate_unit: str = "bpp",
) -> RdCurve:
    """Load a curve from CSV columns (qp, rate, value); a header row is optional."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"curve file not found: {path}")
    qps = []
    points = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                qp, rate, value = int(row[0]), float(row[1]), float(row[2])
            except (ValueError, IndexError):
                if not points and not qps:
                    continue  # header row
                raise DataError(f"malformed curve row in {path}: {row}")
            qps.append(qp)
            points.append((rate, value))
    if len(points) < 2:
        raise DataError(f"curve in {path} has fewer than 2 points")
    return RdCurve(
        points=tuple(points),
        codec_id=codec_id,
        metric_id=metric_id,
        gt_mode=gt_mode,
        rate_unit=rate_unit,
        qps=tuple(qps),
    )


def write_result_json(result: BdResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(result.to_json_obj(), sort_keys=True, indent=2) + "\n")
    return path
