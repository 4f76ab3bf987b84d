"""Monte-Carlo dropout inference and the per-sample uncertainty statistics.

All deviations are population statistics (divide by n_mc) taken around the
averaged prediction ``fp``. Argmax ties resolve to the lowest view index.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .network import ModelParams, forward, make_plan, stack_plans
from .seeding import derive_seed, rng_for

DEFAULT_N_MC = 40


@dataclass
class McPredictionSet:
    samples: np.ndarray
    fp: np.ndarray
    n_mc: int
    seed: int | None = None

    @classmethod
    def from_samples(cls, samples, seed=None) -> "McPredictionSet":
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim != 2 or len(samples) < 2:
            raise ValueError("need an (n_mc >= 2, n_v) matrix of MC predictions")
        return cls(samples, final_prediction(samples), len(samples), seed)


@dataclass
class UncertaintyReport:
    sigma_v: np.ndarray
    sigma_mean: float
    sigma_nbv: float
    sigma_whole: float
    sigma_accuracy: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sigma_v"] = self.sigma_v.tolist()
        return d


def final_prediction(samples: np.ndarray) -> np.ndarray:
    """Column mean, computed around the first row so identical rows reproduce it exactly."""
    ref = samples[0]
    return ref + (samples - ref).mean(axis=0)


def mc_inference(params: ModelParams, sample, n_mc: int = DEFAULT_N_MC, seed: int = 0) -> McPredictionSet:
    """``n_mc`` dropout-on forward passes of one sample.

    Pass ``i`` draws its masks from the stream keyed by ``(seed, i)``, so the
    matrix does not depend on how passes are batched or ordered.
    """
    if n_mc < 2:
        raise ValueError("n_mc must be >= 2")
    points = np.asarray(sample.partial, dtype=np.float64)
    plans = [make_plan(params.arch, 1, len(points), rng_for(seed, "mc", i)) for i in range(n_mc)]
    pts = np.broadcast_to(points, (n_mc, *points.shape))
    vs = np.broadcast_to(np.asarray(sample.view_state, dtype=np.float64), (n_mc, params.arch.n_views))
    rows, _ = forward(params, pts, vs, stack_plans(plans))
    return McPredictionSet.from_samples(rows, seed)


def sample_seed(seed: int, sample) -> int:
    return derive_seed(seed, "mc", sample.model_id, int(sample.step))


def mc_predict(params: ModelParams, samples, n_mc: int = DEFAULT_N_MC, seed: int = 0) -> list:
    """MC sets for many samples; each sample gets its own derived seed."""
    return [mc_inference(params, s, n_mc, sample_seed(seed, s)) for s in samples]


def _argmax(x: np.ndarray, axis=-1):
    # np.argmax returns the first maximal index
    return np.argmax(x, axis=axis)


def sigma_by_view(mc: McPredictionSet) -> np.ndarray:
    dev = mc.samples - mc.fp
    return np.sqrt((dev * dev).mean(axis=0))


def sigma_mean(mc: McPredictionSet) -> float:
    return float(sigma_by_view(mc).mean())


def sigma_nbv(mc: McPredictionSet) -> float:
    return float(sigma_by_view(mc)[_argmax(mc.fp)])


def sigma_whole(mc: McPredictionSet) -> float:
    dev = mc.samples - mc.fp
    return float(np.sqrt((dev * dev).sum(axis=1).mean()))


def mc_sample_accuracy(mc: McPredictionSet) -> np.ndarray:
    """1 where a pass picks the same best view as ``fp``."""
    return (_argmax(mc.samples, axis=1) == _argmax(mc.fp)).astype(np.int64)


def sigma_accuracy(mc: McPredictionSet) -> float:
    miss = 1 - mc_sample_accuracy(mc)
    return float(np.sqrt((miss * miss).mean()))


def uncertainty_report(mc: McPredictionSet) -> UncertaintyReport:
    sv = sigma_by_view(mc)
    return UncertaintyReport(
        sigma_v=sv,
        sigma_mean=float(sv.mean()),
        sigma_nbv=float(sv[_argmax(mc.fp)]),
        sigma_whole=sigma_whole(mc),
        sigma_accuracy=sigma_accuracy(mc),
    )


def deterministic_report(n_views: int) -> UncertaintyReport:
    """All-zero report attached to dropout-off predictions."""
    return UncertaintyReport(np.zeros(n_views), 0.0, 0.0, 0.0, 0.0)
