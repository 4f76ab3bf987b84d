"""Simulated next-best-view scans and NDJSON dataset persistence."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .geometry import CoverageIndex, CoverageParams, ViewSphere, default_epsilon, make_view_sphere
from .seeding import derive_seed
from .shapes import FAMILIES, KNOWN_FAMILIES, NOVEL_FAMILIES, generate_shape

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test", "test_novel")
POLICIES = ("greedy", "random", "mixed")


class DatasetError(ValueError):
    pass


@dataclass
class NbvSample:
    model_id: str
    family: str
    step: int
    partial: np.ndarray
    view_state: np.ndarray
    gt: np.ndarray

    @property
    def n_views(self) -> int:
        return len(self.gt)

    def to_record(self) -> dict:
        return {
            "model_id": self.model_id,
            "family": self.family,
            "step": int(self.step),
            "partial": self.partial.tolist(),
            "view_state": [int(v) for v in self.view_state],
            "gt": self.gt.tolist(),
        }

    @classmethod
    def from_record(cls, rec: dict, n_in: int | None = None) -> "NbvSample":
        return _validate_record(rec, n_in)


@dataclass
class ScanTrace:
    samples: list
    views: list
    coverage: list


def resample_indices(idx: np.ndarray, n_in: int, rng: np.random.Generator) -> np.ndarray:
    """Exactly ``n_in`` entries of ``idx``: a subset when larger, padded with repeats when smaller."""
    idx = np.asarray(idx)
    if len(idx) == 0:
        raise ValueError("cannot resample an empty partial cloud")
    if len(idx) >= n_in:
        return rng.choice(idx, size=n_in, replace=False)
    return np.concatenate([idx, rng.choice(idx, size=n_in - len(idx), replace=True)])


def _pick_greedy(gt: np.ndarray, visited: np.ndarray) -> int:
    masked = np.where(visited, -np.inf, gt)
    return int(np.argmax(masked))


def scan_trace(full, sphere: ViewSphere, params: CoverageParams, steps: int, policy: str = "greedy",
               seed: int = 0, n_in: int = 256, random_fraction: float = 0.25,
               model_id: str = "", family: str = "", index: CoverageIndex | None = None) -> ScanTrace:
    """Run one simulated scan and keep the realised coverage after every view.

    ``mixed`` moves greedily except for a seeded ``random_fraction`` of
    steps, which pick a random unvisited view.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if steps > sphere.n_views:
        raise ValueError("more steps than candidate views")
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    index = index or CoverageIndex(full, params, sphere)
    rng = np.random.default_rng(seed)
    visited = np.zeros(sphere.n_views, dtype=bool)
    view = int(rng.integers(sphere.n_views))
    seen = np.zeros(len(index.full), dtype=bool)
    samples, views, coverage = [], [], []
    for step in range(steps):
        visited[view] = True
        seen |= index.view_masks[view]
        views.append(view)
        coverage.append(index.score(seen))
        stored = resample_indices(np.nonzero(seen)[0], n_in, rng)
        gt = index.gains(stored)
        samples.append(NbvSample(model_id, family, step, index.full[stored], visited.astype(np.int8), gt))
        if step == steps - 1:
            break
        explore = policy == "random" or (policy == "mixed" and rng.random() < random_fraction)
        if explore:
            view = int(rng.choice(np.nonzero(~visited)[0]))
        else:
            view = _pick_greedy(gt, visited)
    return ScanTrace(samples, views, coverage)


def simulate_scan_sequence(full, sphere: ViewSphere, params: CoverageParams, steps: int,
                           policy: str = "greedy", seed: int = 0, n_in: int = 256, **kw) -> list:
    return scan_trace(full, sphere, params, steps, policy, seed, n_in, **kw).samples


@dataclass
class DataConfig:
    master_seed: int = 0
    n_points: int = 1024
    n_in: int = 256
    steps: int = 6
    n_views: int = 33
    radius: float = 5.0
    epsilon_scale: float = 2.0
    angular_bins: int = 64
    field_of_view: float = 30.0
    policy: str = "mixed"
    random_fraction: float = 0.25
    known_families: list = field(default_factory=lambda: list(KNOWN_FAMILIES))
    novel_families: list = field(default_factory=lambda: list(NOVEL_FAMILIES))
    per_family: dict = field(default_factory=lambda: {"train": 10, "valid": 2, "test": 3, "test_novel": 3})

    def validate(self):
        overlap = set(self.known_families) & set(self.novel_families)
        if overlap:
            raise DatasetError(f"novel families overlap known families: {sorted(overlap)}")
        unknown = set(self.known_families) | set(self.novel_families)
        unknown -= set(FAMILIES)
        if unknown:
            raise DatasetError(f"unknown families: {sorted(unknown)}")
        bad = set(self.per_family) - set(SPLITS)
        if bad:
            raise DatasetError(f"unknown splits in per_family: {sorted(bad)}")
        if any(int(v) < 0 for v in self.per_family.values()):
            raise DatasetError("per-family counts must be nonnegative")
        if self.n_in < 1 or self.steps < 1 or self.n_views < 2:
            raise DatasetError("n_in, steps must be >= 1 and n_views >= 2")


@dataclass
class DatasetSplit:
    train: list
    valid: list
    test: list
    test_novel: list
    models: dict = field(default_factory=dict)

    def ids(self, split: str) -> list:
        return getattr(self, split)


def _model_plan(cfg: DataConfig):
    """Ordered (split, family, model_id) triples; ids are unique across splits."""
    plan = []
    for fam in cfg.known_families:
        k = 0
        for split in ("train", "valid", "test"):
            for _ in range(int(cfg.per_family.get(split, 0))):
                plan.append((split, fam, f"{fam}-{k:04d}"))
                k += 1
    for fam in cfg.novel_families:
        for k in range(int(cfg.per_family.get("test_novel", 0))):
            plan.append(("test_novel", fam, f"{fam}-{k:04d}"))
    return plan


def model_geometry(cfg: DataConfig, family: str, model_id: str):
    """Full cloud and per-object coverage parameters for one model."""
    shape_seed = derive_seed(cfg.master_seed, "data", "shape", model_id)
    full = generate_shape(family, shape_seed, cfg.n_points)
    eps = default_epsilon(full, cfg.epsilon_scale)
    params = CoverageParams(eps, cfg.angular_bins, cfg.field_of_view)
    return full, params, shape_seed


def build_dataset(cfg: DataConfig, out_dir) -> DatasetSplit:
    """Generate every split, write one NDJSON file per split plus ``manifest.json``."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sphere = make_view_sphere(cfg.n_views, cfg.radius)
    split = DatasetSplit([], [], [], [])
    handles = {s: open(out / f"{s}.ndjson", "w") for s in SPLITS}
    try:
        for name, fam, mid in _model_plan(cfg):
            full, params, shape_seed = model_geometry(cfg, fam, mid)
            trace = scan_trace(full, sphere, params, cfg.steps, cfg.policy,
                               seed=derive_seed(cfg.master_seed, "data", "scan", mid),
                               n_in=cfg.n_in, random_fraction=cfg.random_fraction,
                               model_id=mid, family=fam)
            for s in trace.samples:
                handles[name].write(json.dumps(s.to_record()) + "\n")
            split.ids(name).append(mid)
            split.models[mid] = {"family": fam, "split": name, "shape_seed": shape_seed,
                                 "epsilon": params.epsilon, "views": trace.views,
                                 "coverage": trace.coverage}
            log.debug("model %s: final coverage %.3f", mid, trace.coverage[-1])
    finally:
        for h in handles.values():
            h.close()
    manifest = {s: split.ids(s) for s in SPLITS}
    manifest["config"] = asdict(cfg)
    manifest["models"] = split.models
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return split


def load_manifest(path) -> DatasetSplit:
    data = json.loads(Path(path).read_text())
    return DatasetSplit(*(data[s] for s in SPLITS), models=data.get("models", {}))


def _validate_record(rec, n_in=None, where="record") -> NbvSample:
    def fail(name, why):
        raise DatasetError(f"{where}: field {name!r} {why}")

    if not isinstance(rec, dict):
        raise DatasetError(f"{where}: expected a JSON object")
    for name in ("model_id", "family", "step", "partial", "view_state", "gt"):
        if name not in rec:
            fail(name, "is missing")
    if not isinstance(rec["model_id"], str):
        fail("model_id", "must be a string")
    if not isinstance(rec["step"], int) or rec["step"] < 0:
        fail("step", "must be a nonnegative integer")
    try:
        partial = np.asarray(rec["partial"], dtype=np.float64)
    except (TypeError, ValueError):
        fail("partial", "is not a numeric array")
    if partial.ndim != 2 or partial.shape[1] != 3 or not np.all(np.isfinite(partial)):
        fail("partial", "must be a list of finite [x, y, z] triples")
    if n_in is not None and len(partial) != n_in:
        fail("partial", f"has {len(partial)} points, expected {n_in}")
    vs = rec["view_state"]
    if not isinstance(vs, list) or not vs or any(v not in (0, 1) or isinstance(v, bool) for v in vs):
        fail("view_state", "must be a non-empty list of 0/1")
    if sum(vs) < 1:
        fail("view_state", "has no visited view")
    try:
        gt = np.asarray(rec["gt"], dtype=np.float64)
    except (TypeError, ValueError):
        fail("gt", "is not a numeric array")
    if gt.ndim != 1 or len(gt) != len(vs):
        fail("gt", "must have one entry per view")
    if not np.all((gt >= 0) & (gt <= 1)):
        fail("gt", "entries must lie in [0, 1]")
    return NbvSample(rec["model_id"], str(rec["family"]), rec["step"], partial,
                     np.asarray(vs, dtype=np.int8), gt)


def read_dataset(path, n_in: int | None = None) -> Iterator[NbvSample]:
    """Yield validated samples from an NDJSON file in file order."""
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            yield _validate_record(rec, n_in, where=f"{path}:{lineno}")


def write_dataset(samples, path) -> None:
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_record()) + "\n")


def stack_samples(samples):
    """(points, view_state, gt) arrays of shapes (B, n, 3), (B, n_v), (B, n_v)."""
    if not samples:
        raise ValueError("no samples to stack")
    pts = np.stack([s.partial for s in samples]).astype(np.float64)
    vs = np.stack([s.view_state for s in samples]).astype(np.float64)
    gt = np.stack([s.gt for s in samples]).astype(np.float64)
    return pts, vs, gt
