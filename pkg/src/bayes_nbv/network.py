"""Shared-MLP / max-pool coverage regressor with dropout after every hidden layer.

Everything is plain float64 numpy: forward pass, analytic backward pass,
Adam updates and JSON checkpoints.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import stack_samples
from .seeding import rng_for

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "bayes-nbv-checkpoint/1"


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class Architecture:
    per_point_widths: tuple = (3, 64, 128)
    head_widths: tuple = (128 + 33, 128, 64, 33)
    dropout_rate: float = 0.5
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "per_point_widths", tuple(int(w) for w in self.per_point_widths))
        object.__setattr__(self, "head_widths", tuple(int(w) for w in self.head_widths))
        if self.per_point_widths[0] != 3 or len(self.per_point_widths) < 2:
            raise ValueError("per-point stage must start at width 3 and have at least one layer")
        if len(self.head_widths) < 2:
            raise ValueError("head needs at least one layer")
        if self.head_widths[0] != self.per_point_widths[-1] + self.n_views:
            raise ValueError("head input width must equal pooled width + n_views")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @classmethod
    def default(cls, n_views: int = 33, dropout_rate: float = 0.5, point_widths=(3, 64, 128),
                head_hidden=(128, 64)):
        pw = tuple(point_widths)
        return cls(pw, (pw[-1] + n_views, *head_hidden, n_views), dropout_rate)

    @property
    def n_views(self) -> int:
        return self.head_widths[-1]

    @property
    def n_point_layers(self) -> int:
        return len(self.per_point_widths) - 1

    def layer_shapes(self):
        pw, hw = self.per_point_widths, self.head_widths
        return [(pw[i], pw[i + 1]) for i in range(len(pw) - 1)] + [(hw[i], hw[i + 1]) for i in range(len(hw) - 1)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_point_widths"] = list(self.per_point_widths)
        d["head_widths"] = list(self.head_widths)
        return d


@dataclass
class ModelParams:
    arch: Architecture
    weights: list
    biases: list
    step: int = 0
    seed: int = 0

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, [w.copy() for w in self.weights], [b.copy() for b in self.biases],
                           self.step, self.seed)

    def tensors(self):
        """Weights then biases, in layer order; the layout used for gradients."""
        return [*self.weights, *self.biases]


@dataclass
class DropoutPlan:
    """Keep-masks (1 = keep) for one batch of stochastic forward passes."""

    point_masks: list
    head_masks: list
    rate: float
    seed: int | None = None


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 16
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8


def init_params(arch: Architecture, seed: int = 0) -> ModelParams:
    """Uniform weights in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases.

    The narrower-than-He range matters here: inverted dropout feeding a
    max-pool inflates activations, and wider weights start training with
    outputs in the hundreds.
    """
    rng = rng_for(seed, "init")
    weights, biases = [], []
    for fan_in, fan_out in arch.layer_shapes():
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelParams(arch, weights, biases, 0, int(seed))


def make_plan(arch: Architecture, batch: int, n_points: int, rng) -> DropoutPlan:
    if isinstance(rng, (int, np.integer)):
        seed, rng = int(rng), np.random.default_rng(int(rng))
    else:
        seed = None
    p = arch.dropout_rate
    pw, hw = arch.per_point_widths, arch.head_widths
    point = [(rng.random((batch, n_points, w)) >= p).astype(np.float64) for w in pw[1:]]
    head = [(rng.random((batch, w)) >= p).astype(np.float64) for w in hw[1:-1]]
    return DropoutPlan(point, head, p, seed)


def stack_plans(plans) -> DropoutPlan:
    return DropoutPlan(
        [np.concatenate(ms) for ms in zip(*(pl.point_masks for pl in plans))],
        [np.concatenate(ms) for ms in zip(*(pl.head_masks for pl in plans))],
        plans[0].rate,
    )


def _act(arch, z):
    return np.maximum(z, 0.0) if arch.activation == "relu" else z


def _act_grad(arch, z):
    return (z > 0).astype(np.float64) if arch.activation == "relu" else np.ones_like(z)


def _dense(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``x @ w`` with a fixed summation order per row.

    BLAS picks different kernels for different batch sizes, which changes
    results in the last bit; reducing over a non-contiguous axis keeps every
    sample's output independent of what else is in the batch.
    """
    return (x[:, :, None] * w[None, :, :]).sum(axis=1)


def forward(params: ModelParams, points, view_state, plan: DropoutPlan | None = None):
    """Scores of shape (B, n_v) and the cache needed by :func:`backward`.

    ``plan=None`` is the deterministic pass (no masks, no scaling). With a
    plan, activations are multiplied by the keep-mask and by 1/(1-p).
    """
    arch = params.arch
    points = np.asarray(points, dtype=np.float64)
    view_state = np.asarray(view_state, dtype=np.float64)
    if points.ndim == 2:
        points = points[None]
    if view_state.ndim == 1:
        view_state = view_state[None]
    if points.shape[-1] != 3 or view_state.shape != (points.shape[0], arch.n_views):
        raise ValueError(f"shape mismatch: points {points.shape}, view_state {view_state.shape}")
    scale = 1.0 / (1.0 - arch.dropout_rate) if plan is not None else 1.0
    lp = arch.n_point_layers
    cache = {"inputs": [], "pre": [], "masks": [], "scale": scale}
    h = points
    for i in range(lp):
        z = h @ params.weights[i] + params.biases[i]
        a = _act(arch, z)
        m = None
        if plan is not None:
            m = plan.point_masks[i]
            a = a * m * scale
        cache["inputs"].append(h)
        cache["pre"].append(z)
        cache["masks"].append(m)
        h = a
    cache["argmax"] = h.argmax(axis=1)
    cache["n_points"] = h.shape[1]
    g = np.concatenate([h.max(axis=1), view_state], axis=1)
    n_layers = len(params.weights)
    for i in range(lp, n_layers):
        z = _dense(g, params.weights[i]) + params.biases[i]
        cache["inputs"].append(g)
        cache["pre"].append(z)
        if i == n_layers - 1:
            cache["masks"].append(None)
            g = z
            break
        a = _act(arch, z)
        m = None
        if plan is not None:
            m = plan.head_masks[i - lp]
            a = a * m * scale
        cache["masks"].append(m)
        g = a
    return g, cache


def backward(params: ModelParams, cache, d_out, weight_decay: float = 0.0):
    """Gradients (weights list, biases list) given dLoss/dScores for the cached pass."""
    arch = params.arch
    lp = arch.n_point_layers
    n_layers = len(params.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    scale = cache["scale"]
    d = np.asarray(d_out, dtype=np.float64)
    for i in range(n_layers - 1, lp - 1, -1):
        if i != n_layers - 1:
            if cache["masks"][i] is not None:
                d = d * cache["masks"][i] * scale
            d = d * _act_grad(arch, cache["pre"][i])
        x = cache["inputs"][i]
        gw[i] = x.T @ d
        gb[i] = d.sum(axis=0)
        d = d @ params.weights[i].T
    pooled_width = arch.per_point_widths[-1]
    d_pool = d[:, :pooled_width]
    batch = d_pool.shape[0]
    d = np.zeros((batch, cache["n_points"], pooled_width))
    np.put_along_axis(d, cache["argmax"][:, None, :], d_pool[:, None, :], axis=1)
    for i in range(lp - 1, -1, -1):
        if cache["masks"][i] is not None:
            d = d * cache["masks"][i] * scale
        d = d * _act_grad(arch, cache["pre"][i])
        x = cache["inputs"][i]
        gw[i] = x.reshape(-1, x.shape[-1]).T @ d.reshape(-1, d.shape[-1])
        gb[i] = d.sum(axis=(0, 1))
        if i:
            d = d @ params.weights[i].T
    if weight_decay:
        gw = [g + 2.0 * weight_decay * w for g, w in zip(gw, params.weights)]
    return gw, gb


def loss(params: ModelParams, gt, predictions, weight_decay: float = 0.0) -> float:
    """Mean over samples of summed per-view squared error plus L2 on weights."""
    gt = np.asarray(gt, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.float64)
    if gt.shape != predictions.shape:
        raise ValueError("predictions are not aligned with the batch")
    data = float(((gt - predictions) ** 2).sum(axis=1).mean())
    if weight_decay:
        data += weight_decay * sum(float((w * w).sum()) for w in params.weights)
    return data


def loss_and_grad(params: ModelParams, points, view_state, gt, plan=None, weight_decay: float = 0.0):
    pred, cache = forward(params, points, view_state, plan)
    value = loss(params, gt, pred, weight_decay)
    d_out = 2.0 * (pred - gt) / pred.shape[0]
    gw, gb = backward(params, cache, d_out, weight_decay)
    return value, gw, gb


def predict(params: ModelParams, samples, plan: DropoutPlan | None = None, chunk: int = 64) -> np.ndarray:
    pts, vs, _ = stack_samples(samples)
    if plan is not None:
        return forward(params, pts, vs, plan)[0]
    return np.concatenate([forward(params, pts[s:s + chunk], vs[s:s + chunk])[0]
                           for s in range(0, len(pts), chunk)])


class Adam:
    def __init__(self, params: ModelParams, cfg: TrainConfig):
        self.cfg = cfg
        self.m = [np.zeros_like(t) for t in params.tensors()]
        self.v = [np.zeros_like(t) for t in params.tensors()]
        self.t = 0

    def step(self, params: ModelParams, grads):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for t, g, m, v in zip(params.tensors(), grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            t -= c.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + c.adam_eps)
        params.step += 1


def evaluate_loss(params: ModelParams, samples, weight_decay: float = 0.0) -> float:
    _, _, gt = stack_samples(samples)
    return loss(params, gt, predict(params, samples), weight_decay)


def train(params: ModelParams, samples, cfg: TrainConfig, valid=None, callback=None):
    """Minibatch Adam on the L2-regularised squared-error loss.

    Returns the trained copy of ``params`` and a per-epoch log of
    ``{"epoch", "train_loss", "valid_loss"}``; ``train_loss`` is the
    sample-weighted mean of the dropout-on minibatch losses and
    ``valid_loss`` a deterministic pass over ``valid`` (None without it).
    """
    if not samples:
        raise ValueError("empty training set")
    params = params.copy()
    pts, vs, gt = stack_samples(samples)
    n = len(pts)
    shuffle = rng_for(cfg.seed, "shuffle")
    dropout = rng_for(cfg.seed, "dropout")
    opt = Adam(params, cfg)
    history = []
    use_dropout = params.arch.dropout_rate > 0
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            plan = make_plan(params.arch, len(idx), pts.shape[1], dropout) if use_dropout else None
            value, gw, gb = loss_and_grad(params, pts[idx], vs[idx], gt[idx], plan, cfg.weight_decay)
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            opt.step(params, [*gw, *gb])
            total += value * len(idx)
        row = {"epoch": epoch, "train_loss": total / n,
               "valid_loss": evaluate_loss(params, valid, cfg.weight_decay) if valid else None}
        if row["valid_loss"] is not None and not math.isfinite(row["valid_loss"]):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        history.append(row)
        if callback is not None:
            callback(row)
        if epoch == 1 or epoch % 25 == 0:
            log.info("epoch %d train %.5f valid %s", epoch, row["train_loss"], row["valid_loss"])
    return params, history


def save_checkpoint(params: ModelParams, path, extra: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "architecture": params.arch.to_dict(),
        "seed": params.seed,
        "step": params.step,
        "layers": [{"shape": list(w.shape), "weight": w.ravel().tolist(), "bias": b.tolist()}
                   for w, b in zip(params.weights, params.biases)],
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> ModelParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint file")
    arch = Architecture(**doc["architecture"])
    weights, biases = [], []
    for layer, shape in zip(doc["layers"], arch.layer_shapes()):
        if tuple(layer["shape"]) != shape:
            raise ValueError(f"{path}: layer shape {layer['shape']} does not match architecture {shape}")
        weights.append(np.asarray(layer["weight"], dtype=np.float64).reshape(shape))
        biases.append(np.asarray(layer["bias"], dtype=np.float64))
    return ModelParams(arch, weights, biases, int(doc["step"]), int(doc["seed"]))
