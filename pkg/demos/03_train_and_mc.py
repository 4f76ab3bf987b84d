"""Train a small regressor, then compare deterministic and Monte-Carlo-dropout predictions.

Run: python3 demos/03_train_and_mc.py   (about a minute on one core)
"""
import numpy as np

from bayes_nbv.bayesian import deterministic_report, mc_predict, uncertainty_report
from bayes_nbv.dataset import DataConfig, build_dataset, read_dataset
from bayes_nbv.evaluation import make_record, model_metrics
from bayes_nbv.network import Architecture, TrainConfig, init_params, predict, train

build_dataset(DataConfig(n_points=512, per_family={"train": 4, "valid": 1, "test": 2, "test_novel": 1}), "demo_run")
train_set = list(read_dataset("demo_run/train.ndjson"))
test_set = list(read_dataset("demo_run/test.ndjson"))

params = init_params(Architecture.default(dropout_rate=0.5), seed=0)
params, history = train(params, train_set, TrainConfig(epochs=60, seed=0))
print(f"train loss {history[0]['train_loss']:.4f} -> {history[-1]['train_loss']:.4f}")

det = [make_record(s, f, deterministic_report(33)) for s, f in zip(test_set, predict(params, test_set))]
sets = mc_predict(params, test_set, n_mc=40, seed=0)
mc = [make_record(s, m.fp, uncertainty_report(m)) for s, m in zip(test_set, sets)]
print("deterministic:", model_metrics(det))
print("mc dropout:   ", model_metrics(mc))

r = mc[0].report
print(f"first sample: sigma_whole {r.sigma_whole:.4f}, sigma_accuracy {r.sigma_accuracy:.3f}, "
      f"most uncertain view {int(np.argmax(r.sigma_v))}")
