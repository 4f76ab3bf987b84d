"""Next-best-view coverage regression with Monte-Carlo dropout uncertainty."""
from .bayesian import McPredictionSet, UncertaintyReport, mc_inference, mc_predict, uncertainty_report
from .dataset import DataConfig, NbvSample, build_dataset, read_dataset, simulate_scan_sequence
from .evaluation import (CalibrationTable, EvalRecord, FitResult, RejectionCurve, adjusted_coverage,
                         calibrate, euclid_error, linear_fit, model_metrics, rejection_curve,
                         sample_accuracy, squared_error)
from .geometry import CoverageParams, ViewSphere, coverage_gain_vector, coverage_score, make_view_sphere, visible_indices
from .network import Architecture, ModelParams, TrainConfig, forward, init_params, predict, train

__version__ = "0.1.0"
