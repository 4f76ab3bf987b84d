"""Error modelling, rejection curves, calibration and score adjustment on eval records.

Needs a finished run, e.g.
    bayes-nbv gen-data --out run && bayes-nbv train --out run
    bayes-nbv eval --out run --split valid && bayes-nbv eval --out run --split test
Run: python3 demos/04_uncertainty_analysis.py run
"""
import sys

import numpy as np

from bayes_nbv.evaluation import (adjustment_report, calibrate, linear_fit, pearson, read_records,
                                  rejection_curve)

run = sys.argv[1] if len(sys.argv) > 1 else "run"
test = read_records(f"{run}/eval_test_mc.ndjson")
valid = read_records(f"{run}/eval_valid_mc.ndjson")

sw = [r.report.sigma_whole for r in test]
err = [r.euclid_error for r in test]
fit = linear_fit(sw, err)
print(f"error ~ {fit.slope:.3f} * sigma_whole + {fit.intercept:.3f}  (R^2 {fit.r_squared:.3f}, r {pearson(sw, err):.3f})")

for field, metric in (("sigma_accuracy", "accuracy"), ("sigma_whole", "error")):
    curve = rejection_curve(test, field, metric)
    print(f"\nrejection by {field} ({metric})")
    for t, m, f in list(zip(curve.thresholds, curve.accepted_metric, curve.accepted_fraction))[::8]:
        print(f"  t <= {t:.3f}: {m:8.4f} on {100 * f:5.1f}% of samples")

table = calibrate(valid, accuracy_target=60.0)
print("\ncalibrated thresholds:", {k: round(v.threshold, 4) for k, v in table.thresholds.items()})
rep = adjustment_report(test, table)
for formula in ("f1", "f2"):
    for sign in ("plus", "minus"):
        v = rep[formula][sign]
        print(f"{formula} {sign:5s}: accuracy change {v['accuracy_change']:+.2f} pp, error change {v['error_change']:+.4f}")
