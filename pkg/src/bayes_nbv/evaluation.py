"""Error/accuracy metrics, uncertainty analyses and uncertainty-aware score adjustment."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bayesian import UncertaintyReport

BAND_FRACTION = 0.15
UNCERTAINTY_FIELDS = ("sigma_whole", "sigma_accuracy", "sigma_mean", "sigma_nbv")
FORMULAS = ("f1", "f2")
SIGNS = ("plus", "minus")


@dataclass
class EvalRecord:
    model_id: str
    step: int
    gt: np.ndarray
    fp: np.ndarray
    euclid_error: float
    squared_error: float
    correct: int
    report: UncertaintyReport
    family: str = ""
    view_state: np.ndarray | None = None
    mc: np.ndarray | None = None

    def uncertainty(self, name: str) -> float:
        if name not in UNCERTAINTY_FIELDS:
            raise ValueError(f"unknown uncertainty field {name!r}")
        return float(getattr(self.report, name))

    def to_dict(self, dump_mc: bool = False) -> dict:
        d = {
            "model_id": self.model_id,
            "family": self.family,
            "step": int(self.step),
            "gt": self.gt.tolist(),
            "fp": self.fp.tolist(),
            "euclid_error": self.euclid_error,
            "squared_error": self.squared_error,
            "correct": int(self.correct),
            **self.report.to_dict(),
        }
        if self.view_state is not None:
            d["view_state"] = [int(v) for v in self.view_state]
        if dump_mc and self.mc is not None:
            d["mc"] = self.mc.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalRecord":
        report = UncertaintyReport(np.asarray(d["sigma_v"], dtype=np.float64), d["sigma_mean"],
                                   d["sigma_nbv"], d["sigma_whole"], d["sigma_accuracy"])
        return cls(d["model_id"], d["step"], np.asarray(d["gt"], dtype=np.float64),
                   np.asarray(d["fp"], dtype=np.float64), d["euclid_error"], d["squared_error"],
                   d["correct"], report, d.get("family", ""),
                   np.asarray(d["view_state"]) if "view_state" in d else None,
                   np.asarray(d["mc"]) if "mc" in d else None)


def euclid_error(gt, fp) -> float:
    diff = np.asarray(gt, dtype=np.float64) - np.asarray(fp, dtype=np.float64)
    return float(np.sqrt((diff * diff).sum()))


def squared_error(gt, fp) -> float:
    diff = np.asarray(gt, dtype=np.float64) - np.asarray(fp, dtype=np.float64)
    return float((diff * diff).sum())


def acceptable_views(gt, band: float = BAND_FRACTION) -> np.ndarray:
    """Views whose groundtruth gain lies within ``band`` of the gain range below the best."""
    gt = np.asarray(gt, dtype=np.float64)
    top = gt.max()
    floor = top - band * (top - gt.min())
    return np.nonzero(gt >= floor)[0]


def sample_accuracy(gt, fp, band: float = BAND_FRACTION) -> int:
    gt = np.asarray(gt, dtype=np.float64)
    top = gt.max()
    floor = top - band * (top - gt.min())
    return int(gt[int(np.argmax(fp))] >= floor)


def make_record(sample, fp, report: UncertaintyReport, mc=None) -> EvalRecord:
    sq = squared_error(sample.gt, fp)
    return EvalRecord(sample.model_id, sample.step, np.asarray(sample.gt, dtype=np.float64),
                      np.asarray(fp, dtype=np.float64), math.sqrt(sq), sq,
                      sample_accuracy(sample.gt, fp), report, sample.family,
                      np.asarray(sample.view_state), mc)


def model_metrics(records) -> dict:
    """Mean errors and accuracy (percent) over ``records``."""
    if not records:
        raise ValueError("no records")
    return {
        "euclid_error": float(np.mean([r.euclid_error for r in records])),
        "squared_error": float(np.mean([r.squared_error for r in records])),
        "accuracy": 100.0 * float(np.mean([r.correct for r in records])),
        "n": len(records),
    }


# ---------------------------------------------------------------- fitting

@dataclass
class FitResult:
    slope: float
    intercept: float
    r_squared: float

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r_squared": self.r_squared}


def linear_fit(x, y) -> FitResult:
    """Ordinary least squares y ~ slope * x + intercept with R^2 = 1 - SS_res / SS_tot.

    Constant ``y`` is fitted exactly by a flat line and reported with R^2 = 1;
    constant ``x`` has no defined slope and raises.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("need two equal-length 1-d arrays with at least 2 points")
    if np.ptp(x) == 0:
        raise ValueError("x has zero variance; slope is undefined")
    if np.ptp(y) == 0:
        # SS_tot = 0 and the flat line leaves no residual
        return FitResult(0.0, float(y[0]), 1.0)
    xm, ym = x.mean(), y.mean()
    # work on centred, unit-range y so squared sums cannot underflow; R^2 is scale-free
    scale = np.abs(y - ym).max()
    yc = (y - ym) / scale
    xc = x - xm
    b = (xc * yc).sum() / (xc * xc).sum()
    ss_res = float(((yc - b * xc) ** 2).sum())
    ss_tot = float((yc * yc).sum())
    slope = float(b * scale)
    return FitResult(slope, float(ym - slope * xm), 1.0 - ss_res / ss_tot)


def pearson(x, y) -> float:
    return float(np.corrcoef(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))[0, 1])


# ---------------------------------------------------------------- rejection

@dataclass
class RejectionCurve:
    field: str
    metric: str
    thresholds: np.ndarray
    accepted_metric: np.ndarray
    rejected_metric: np.ndarray
    accepted_fraction: np.ndarray
    n_accepted: np.ndarray
    n_total: int

    def rows(self):
        return zip(self.thresholds, self.accepted_metric, self.rejected_metric, self.accepted_fraction)


def _metric(records_values, metric):
    if metric == "error":
        return float(np.mean(records_values))
    return 100.0 * float(np.mean(records_values))


def default_thresholds(values, n: int = 40) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    return np.linspace(values.min(), values.max(), n)


def rejection_curve(records, uncertainty_field: str = "sigma_whole", metric: str = "error",
                    thresholds=None) -> RejectionCurve:
    """Metric over records with uncertainty <= t (accepted) and over the rest.

    ``metric`` is ``error`` (mean Euclidean error) or ``accuracy`` (percent).
    Empty sides are NaN rather than zero.
    """
    if metric not in ("error", "accuracy"):
        raise ValueError(f"unknown metric {metric!r}")
    if not records:
        raise ValueError("no records")
    unc = np.array([r.uncertainty(uncertainty_field) for r in records])
    vals = np.array([r.euclid_error if metric == "error" else r.correct for r in records], dtype=np.float64)
    thr = default_thresholds(unc) if thresholds is None else np.sort(np.asarray(thresholds, dtype=np.float64))
    acc, rej, frac, count = [], [], [], []
    for t in thr:
        keep = unc <= t
        k = int(keep.sum())
        acc.append(_metric(vals[keep], metric) if k else math.nan)
        rej.append(_metric(vals[~keep], metric) if k < len(vals) else math.nan)
        frac.append(k / len(vals))
        count.append(k)
    return RejectionCurve(uncertainty_field, metric, thr, np.array(acc), np.array(rej),
                          np.array(frac), np.array(count), len(vals))


def accuracy_histogram(records, uncertainty_field: str = "sigma_accuracy", bins: int = 10,
                       value_range=(0.0, 1.0)):
    """(bin_low, bin_high, n_correct, n_wrong) rows; last bin is closed."""
    unc = np.array([r.uncertainty(uncertainty_field) for r in records])
    correct = np.array([r.correct for r in records], dtype=bool)
    edges = np.linspace(value_range[0], value_range[1], bins + 1)
    right, _ = np.histogram(unc[correct], edges)
    wrong, _ = np.histogram(unc[~correct], edges)
    return [(float(edges[i]), float(edges[i + 1]), int(right[i]), int(wrong[i])) for i in range(bins)]


# ---------------------------------------------------------------- calibration

@dataclass
class ThresholdChoice:
    field: str
    metric: str
    target: float
    threshold: float | None
    attainable: bool
    achieved: float
    accepted_fraction: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class CalibrationTable:
    max_sigma_view: np.ndarray
    thresholds: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"max_sigma_view": self.max_sigma_view.tolist(),
                "thresholds": {k: v.to_dict() for k, v in self.thresholds.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationTable":
        return cls(np.asarray(d["max_sigma_view"], dtype=np.float64),
                   {k: ThresholdChoice(**v) for k, v in d.get("thresholds", {}).items()})


def choose_threshold(records, uncertainty_field: str, metric: str, target: float) -> ThresholdChoice:
    """Most permissive threshold whose accepted set meets ``target``.

    Accuracy targets are percentages to reach or exceed; error targets are
    mean Euclidean errors to stay at or below. Candidate thresholds are the
    observed uncertainty values. When no threshold qualifies the choice is
    marked unattainable and carries the best achievable value.
    """
    unc = np.array([r.uncertainty(uncertainty_field) for r in records])
    curve = rejection_curve(records, uncertainty_field, metric, np.unique(unc))
    vals = curve.accepted_metric
    ok = vals >= target if metric == "accuracy" else vals <= target
    if ok.any():
        i = int(np.nonzero(ok)[0].max())
        return ThresholdChoice(uncertainty_field, metric, target, float(curve.thresholds[i]), True,
                               float(vals[i]), float(curve.accepted_fraction[i]))
    i = int(np.nanargmax(vals) if metric == "accuracy" else np.nanargmin(vals))
    return ThresholdChoice(uncertainty_field, metric, target, None, False, float(vals[i]),
                           float(curve.accepted_fraction[i]))


def calibrate(records, accuracy_target: float | None = 60.0, error_target: float | None = None) -> CalibrationTable:
    """Per-view maxima of sigma_v plus optional rejection thresholds from a calibration split."""
    if not records:
        raise ValueError("no calibration records")
    max_sv = np.max(np.stack([r.report.sigma_v for r in records]), axis=0)
    table = CalibrationTable(max_sv)
    if accuracy_target is not None:
        table.thresholds["sigma_accuracy"] = choose_threshold(records, "sigma_accuracy", "accuracy", accuracy_target)
    if error_target is not None:
        table.thresholds["sigma_whole"] = choose_threshold(records, "sigma_whole", "error", error_target)
    return table


# ---------------------------------------------------------------- adjustment

def normalized_sigma(sigma_v, max_sigma_view) -> np.ndarray:
    sigma_v = np.asarray(sigma_v, dtype=np.float64)
    max_sigma_view = np.asarray(max_sigma_view, dtype=np.float64)
    out = np.zeros_like(sigma_v)
    np.divide(sigma_v, max_sigma_view, out=out, where=max_sigma_view > 0)
    return out


def adjusted_coverage(fp, sigma_v, table, formula: str = "f1", sign: str = "plus",
                      sigma_accuracy: float = 0.0) -> np.ndarray:
    """Shift ``fp`` by an uncertainty term.

    f1: sigma_v * (sigma_norm * 0.8)
    f2: sigma_v * sigma_norm * sigma_accuracy ** 0.4
    where sigma_norm = sigma_v / max_sigma_view from the calibration table.
    """
    if formula not in FORMULAS:
        raise ValueError(f"unknown formula {formula!r}")
    if sign not in SIGNS:
        raise ValueError(f"unknown sign {sign!r}")
    max_sv = table.max_sigma_view if isinstance(table, CalibrationTable) else table
    fp = np.asarray(fp, dtype=np.float64)
    sigma_v = np.asarray(sigma_v, dtype=np.float64)
    norm = normalized_sigma(sigma_v, max_sv)
    if formula == "f1":
        term = sigma_v * (norm * 0.8)
    else:
        term = sigma_v * norm * float(sigma_accuracy) ** 0.4
    return fp + term if sign == "plus" else fp - term


def adjustment_report(records, table: CalibrationTable) -> dict:
    """Error/accuracy of every formula and sign next to the unadjusted baseline."""
    base = model_metrics(records)
    out = {"baseline": {"euclid_error": base["euclid_error"], "accuracy": base["accuracy"]}, "n": base["n"]}
    for formula in FORMULAS:
        out[formula] = {}
        for sign in SIGNS:
            errs, hits = [], []
            for r in records:
                adj = adjusted_coverage(r.fp, r.report.sigma_v, table, formula, sign, r.report.sigma_accuracy)
                errs.append(euclid_error(r.gt, adj))
                hits.append(sample_accuracy(r.gt, adj))
            err = float(np.mean(errs))
            acc = 100.0 * float(np.mean(hits))
            out[formula][sign] = {
                "euclid_error": err,
                "accuracy": acc,
                "error_change": err - base["euclid_error"],
                "accuracy_change": acc - base["accuracy"],
            }
    return out


def fallback_view(fp, sigma_v, view_state=None) -> int:
    """Experimental: the unvisited view with the smallest per-view deviation."""
    sigma_v = np.asarray(sigma_v, dtype=np.float64)
    if view_state is not None:
        sigma_v = np.where(np.asarray(view_state) > 0, np.inf, sigma_v)
    return int(np.argmin(sigma_v))


# ---------------------------------------------------------------- files

def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_scatter(records, path, uncertainty_field: str = "sigma_whole") -> None:
    write_csv(path, ["uncertainty", "error", "correct"],
              [(r.uncertainty(uncertainty_field), r.euclid_error, int(r.correct)) for r in records])


def write_rejection(curve: RejectionCurve, path) -> None:
    write_csv(path, ["threshold", "accepted_value", "rejected_value", "accepted_fraction"], curve.rows())


def write_histogram(rows, path) -> None:
    write_csv(path, ["bin_low", "bin_high", "n_correct", "n_wrong"], rows)


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n")


def read_records(path) -> list:
    with open(path) as fh:
        return [EvalRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


def write_records(records, path, dump_mc: bool = False) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(dump_mc)) + "\n")
