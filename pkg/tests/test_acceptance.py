"""End-to-end acceptance checks.

Each test prints one PASS/FAIL line; the lines are repeated in the terminal summary.
The trained-pipeline fixture runs the default configuration through the CLI
(480 training samples, 300 epochs, single thread), so this module takes a few minutes.
"""
import json
import math
import time

import numpy as np
import pytest

from bayes_nbv import cli
from bayes_nbv.bayesian import McPredictionSet, mc_inference, uncertainty_report
from bayes_nbv.dataset import read_dataset
from bayes_nbv.evaluation import linear_fit, pearson, read_records, rejection_curve
from bayes_nbv.geometry import CoverageParams, coverage_gain_vector, coverage_score, make_view_sphere
from bayes_nbv.network import Architecture, load_checkpoint

from .oracles import brute_coverage, brute_gains, gradient_check


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance") / "run"
    base = ["--out", str(out)]
    start = time.perf_counter()
    assert cli.main(["gen-data"] + base) == 0
    assert cli.main(["train"] + base) == 0
    train_seconds = time.perf_counter() - start
    for extra in (["--split", "valid"], ["--split", "test"], ["--split", "test", "--mode", "det"],
                  ["--split", "novel"], ["--split", "novel", "--mode", "det"]):
        assert cli.main(["eval"] + base + extra) == 0
    for step in ("analyze", "adjust", "report"):
        assert cli.main([step] + base) == 0
    return out, train_seconds


def summary(out, split, mode):
    return json.loads((out / f"summary_{split}_{mode}.json").read_text())


def first_argmax(row):
    best = 0
    for j in range(1, len(row)):
        if row[j] > row[best]:
            best = j
    return best


def test_01_variance_identity(criterion):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst, exact = 0.0, True
    for _ in range(1000):
        m = rng.random((40, 33)) * rng.choice([1e-3, 1.0, 10.0])
        mc = McPredictionSet.from_samples(m)
        r = uncertainty_report(mc)
        worst = max(worst, abs(r.sigma_whole ** 2 - (r.sigma_v ** 2).sum()) / (r.sigma_v ** 2).sum())
        top = first_argmax(mc.fp)
        k = sum(first_argmax(row) != top for row in m)
        exact &= r.sigma_accuracy == math.sqrt(k / 40)
    seconds = time.perf_counter() - start
    criterion(1, worst <= 1e-9 and exact and seconds < 5,
              f"variance identity worst rel {worst:.2e} (<= 1e-9), sigma_accuracy exact {exact}, {seconds:.2f} s (< 5)")


def test_02_dropout_off_collapse(trained, criterion):
    out, _ = trained
    params = load_checkpoint(out / "checkpoint.json")
    params.arch = Architecture(params.arch.per_point_widths, params.arch.head_widths, 0.0, params.arch.activation)
    samples = list(read_dataset(out / "data" / "test.ndjson"))
    identical = zeros = True
    for s in samples[:12]:
        mc = mc_inference(params, s, 40, 0)
        identical &= bool(np.all(mc.samples == mc.samples[0]))
        r = uncertainty_report(mc)
        zeros &= not r.sigma_v.any() and r.sigma_whole == r.sigma_mean == r.sigma_nbv == r.sigma_accuracy == 0.0
    _, det = cli.evaluate_split(params, samples, "det", 40, 0, 1e-4)
    _, mc_summary = cli.evaluate_split(params, samples, "mc", 40, 0, 1e-4)
    criterion(2, identical and zeros and det == mc_summary,
              f"dropout 0: rows identical {identical}, all sigma zero {zeros}, det summary == mc summary {det == mc_summary}")


def test_03_gradient_correctness(criterion):
    start = time.perf_counter()
    errors = [gradient_check(seed) for seed in range(20)]
    seconds = time.perf_counter() - start
    criterion(3, max(errors) <= 1e-6 and seconds < 30,
              f"20 configurations, worst relative gradient error {max(errors):.2e} (<= 1e-6), {seconds:.1f} s (< 30)")


def test_04_coverage_oracle(criterion):
    rng = np.random.default_rng(7)
    sphere = make_view_sphere(4, 5.0)
    matches = monotone = 0
    n = 60
    for _ in range(n):
        full = rng.uniform(-1, 1, size=(rng.integers(5, 11), 3))
        partial = full[rng.random(len(full)) < 0.4] + rng.normal(scale=0.05, size=(1, 3))
        params = CoverageParams(float(rng.uniform(0.1, 0.8)), angular_bins=8, field_of_view=60.0)
        eps = params.epsilon
        score = coverage_score(partial, full, params)
        same = score == brute_coverage(partial, full, eps)
        same &= bool(np.array_equal(coverage_gain_vector(partial, full, sphere, params),
                                    brute_gains(partial, full, sphere, params)))
        matches += same
        grown = np.vstack([partial, rng.uniform(-1, 1, size=(1, 3))])
        monotone += coverage_score(grown, full, params) >= score
    criterion(4, matches == n and monotone == n,
              f"{matches}/{n} random 5-10 point clouds match brute force, monotone on {monotone}/{n}")


def test_05_training(trained, criterion):
    out, seconds = trained
    rows = (out / "learning_curve.csv").read_text().splitlines()[1:]
    first, last = float(rows[0].split(",")[1]), float(rows[-1].split(",")[1])
    n_train = sum(1 for _ in open(out / "data" / "train.ndjson"))
    known = {m: summary(out, "test", m)["accuracy"] for m in ("det", "mc")}
    novel = {m: summary(out, "novel", m)["accuracy"] for m in ("det", "mc")}
    ok = (n_train == 480 and len(rows) == 300 and last <= 0.2 * first and seconds < 600
          and min(known.values()) >= 15.0 and all(novel[m] <= known[m] for m in known))
    criterion(5, ok,
              f"{n_train} samples, {len(rows)} epochs, loss {first:.4f} -> {last:.4f} (<= 20%), "
              f"data+train {seconds:.0f} s (< 600); known acc det {known['det']:.2f}% mc {known['mc']:.2f}% (>= 15), "
              f"novel det {novel['det']:.2f}% mc {novel['mc']:.2f}% (<= known)")


def test_06_error_uncertainty_correlation(trained, criterion):
    out, _ = trained
    records = read_records(out / "eval_test_mc.ndjson")
    r = pearson([rec.report.sigma_whole for rec in records], [rec.euclid_error for rec in records])
    criterion(6, r >= 0.3, f"Pearson(sigma_whole, error) on test = {r:.3f} (>= 0.3)")


def test_07_rejection_trend(trained, criterion):
    out, _ = trained
    records = read_records(out / "eval_test_mc.ndjson")
    # every observed value is a candidate threshold, so "there exists" is checked exhaustively
    acc = rejection_curve(records, "sigma_accuracy", "accuracy",
                          sorted({r.report.sigma_accuracy for r in records}))
    overall_acc = acc.accepted_metric[-1]
    gains = [(m - overall_acc, f, t) for m, f, t in zip(acc.accepted_metric, acc.accepted_fraction, acc.thresholds)
             if f >= 0.2]
    best_gain, best_frac, best_t = max(gains)
    err = rejection_curve(records, "sigma_whole", "error", sorted({r.report.sigma_whole for r in records}))
    overall_err = err.accepted_metric[-1]
    lower = [(m, t) for m, t in zip(err.accepted_metric, err.thresholds) if m < overall_err]
    ok_acc = best_gain >= 10.0
    ok_err = bool(lower)
    detail = (f"sigma_accuracy: best accepted accuracy {overall_acc + best_gain:.2f}% vs overall {overall_acc:.2f}% "
              f"(+{best_gain:.2f} pp, need >= 10) at t={best_t:.3f} accepting {100 * best_frac:.0f}% (>= 20%); ")
    if ok_err:
        best_err, err_t = min(lower)
        detail += f"sigma_whole: accepted error {best_err:.4f} < overall {overall_err:.4f} at t={err_t:.4f}"
    else:
        detail += f"sigma_whole: no threshold lowers the error below {overall_err:.4f}"
    criterion(7, ok_acc and ok_err, detail)


def test_08_adjustment(trained, criterion):
    out, _ = trained
    rep = json.loads((out / "adjust_report.json").read_text())
    changes = {f"{f}/{s}": rep[f][s]["accuracy_change"] for f in ("f1", "f2") for s in ("plus", "minus")}
    exact = all(rep[f][s]["accuracy_change"] == rep[f][s]["accuracy"] - rep["baseline"]["accuracy"]
                for f in ("f1", "f2") for s in ("plus", "minus"))
    text = ", ".join(f"{k} {v:+.2f}" for k, v in changes.items())
    criterion(8, exact and all(abs(v) < 2.0 for v in changes.values()),
              f"accuracy change per variant (pp, |.| < 2): {text}; deltas exact {exact}")


def test_09_linear_fit(criterion):
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(200):
        slope, intercept = rng.normal(scale=5, size=2)
        x = rng.uniform(-3, 3, size=rng.integers(2, 60))
        fit = linear_fit(x, slope * x + intercept)
        worst = max(worst, abs(fit.slope - slope), abs(fit.intercept - intercept), abs(fit.r_squared - 1.0))
    criterion(9, worst <= 1e-9, f"200 exact-linear datasets, worst slope/intercept/R^2 deviation {worst:.2e} (<= 1e-9)")


SMALL_RUN = {
    "master_seed": 3,
    "data": {"n_points": 256, "n_in": 64, "steps": 3, "n_views": 12,
             "known_families": ["sphere", "torus", "cone"], "novel_families": ["prism"],
             "per_family": {"train": 2, "valid": 1, "test": 1, "test_novel": 1}},
    "model": {"point_widths": [3, 16, 32], "head_hidden": [24, 16]},
    "train": {"epochs": 5},
    "eval": {"n_mc": 8},
}


def test_10_reproducibility(tmp_path, criterion):
    config = tmp_path / "small.json"
    config.write_text(json.dumps(SMALL_RUN))
    for name in ("a", "b"):
        base = ["--config", str(config), "--out", str(tmp_path / name)]
        assert cli.main(["gen-data"] + base) == 0
        assert cli.main(["train"] + base) == 0
        for extra in (["--dump-mc"], ["--mode", "det"], ["--split", "novel"]):
            assert cli.main(["eval"] + base + extra) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    differ = [str(f) for f in files if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    criterion(10, len(files) >= 10 and not differ,
              f"{len(files)} output files from gen-data/train/eval rerun, byte-identical: {not differ} {differ}")
