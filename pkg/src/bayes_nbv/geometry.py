"""Point-cloud primitives, candidate views, z-buffer visibility and coverage.

A point cloud is a plain ``(N, 3)`` float64 array. Coverage of a complete
cloud by a partial one is the fraction of complete-cloud points that have a
partial-cloud point within ``epsilon``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

BRUTE_FORCE_BELOW = 64
_KEY_OFFSET = 1 << 20
_KEY_BASE = 1 << 21
_COORD_CLIP = 1 << 19


def as_cloud(points, allow_empty: bool = True) -> np.ndarray:
    """Validate and return ``points`` as a contiguous (N, 3) float64 array."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.size == 0:
        if not allow_empty:
            raise ValueError("point cloud is empty")
        return np.zeros((0, 3))
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"point cloud must have shape (N, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("point cloud contains non-finite coordinates")
    return np.ascontiguousarray(arr)


def squared_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Element-wise squared distance between broadcastable point arrays."""
    diff = a - b
    return (diff * diff).sum(axis=-1)


@dataclass(frozen=True)
class CoverageParams:
    """Distance threshold and z-buffer resolution for one object.

    ``field_of_view`` is the full angular width (degrees) of the square
    z-buffer window centred on the line of sight; the default frames a
    unit-radius object seen from the default sphere radius of 5.
    """

    epsilon: float
    angular_bins: int = 64
    field_of_view: float = 30.0
    splat_scale: float = 2.0
    slope_allowance: float = 3.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.angular_bins < 8:
            raise ValueError("angular_bins must be >= 8")
        if not 0 < self.field_of_view < 180:
            raise ValueError("field_of_view must lie in (0, 180) degrees")
        if self.splat_scale < 0 or self.slope_allowance < 0:
            raise ValueError("splat_scale and slope_allowance must be nonnegative")


@dataclass(frozen=True)
class ViewSphere:
    directions: np.ndarray
    radius: float
    center: np.ndarray

    @property
    def n_views(self) -> int:
        return len(self.directions)

    @property
    def positions(self) -> np.ndarray:
        return self.center + self.radius * self.directions

    def position(self, j: int) -> np.ndarray:
        return self.center + self.radius * self.directions[j]


def make_view_sphere(n_views: int = 33, radius: float = 5.0, center=(0.0, 0.0, 0.0)) -> ViewSphere:
    """Candidate camera positions on a Fibonacci spiral around ``center``."""
    if n_views < 2:
        raise ValueError("need at least two views")
    if not radius > 0:
        raise ValueError("radius must be positive")
    i = np.arange(n_views, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n_views
    r = np.sqrt(1.0 - z * z)
    phi = i * math.pi * (3.0 - math.sqrt(5.0))
    dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return ViewSphere(dirs, float(radius), np.asarray(center, dtype=np.float64).reshape(3))


def pairwise_view_angles(sphere: ViewSphere) -> np.ndarray:
    """Angles (radians) between all view directions; diagonal is zero."""
    cos = np.clip(sphere.directions @ sphere.directions.T, -1.0, 1.0)
    return np.arccos(cos)


class SpatialHashGrid:
    """Uniform grid over a point set for radius and nearest-neighbour queries.

    Cells are keyed by packed integer coordinates and looked up with a
    binary search over the sorted occupied keys.
    """

    def __init__(self, points, cell_size: float | None = None):
        self.points = as_cloud(points, allow_empty=False)
        lo = self.points.min(axis=0)
        extent = float((self.points.max(axis=0) - lo).max())
        if cell_size is None:
            cell_size = extent * 2.0 / math.sqrt(len(self.points)) if extent > 0 else 1.0
        # keep cell coordinates well inside the packed key range
        cell_size = max(float(cell_size), extent / (1 << 17), 1e-12)
        self.cell_size = cell_size
        self.origin = lo
        coords = self._cell_coords(self.points)
        self.dims = coords.max(axis=0) + 1
        keys = self._pack(coords)
        self.order = np.argsort(keys, kind="stable")
        sorted_keys = keys[self.order]
        self.cell_keys, self.cell_start = np.unique(sorted_keys, return_index=True)
        self.cell_end = np.append(self.cell_start[1:], len(sorted_keys))

    def __len__(self):
        return len(self.points)

    def _cell_coords(self, pts: np.ndarray) -> np.ndarray:
        c = np.floor((pts - self.origin) / self.cell_size)
        return np.clip(c, -_COORD_CLIP, _COORD_CLIP).astype(np.int64)

    @staticmethod
    def _pack(coords: np.ndarray) -> np.ndarray:
        c = coords + _KEY_OFFSET
        return (c[:, 0] * _KEY_BASE + c[:, 1]) * _KEY_BASE + c[:, 2]

    def pairs_within(self, queries, radius: float):
        """All (query index, point index, squared distance) with distance <= radius."""
        queries = as_cloud(queries)
        empty = (np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))
        if len(queries) == 0:
            return empty
        r2 = radius * radius
        k = int(math.ceil(radius / self.cell_size))
        if len(self.points) < BRUTE_FORCE_BELOW or (2 * k + 1) > 2 * int(self.dims.max()) + 2:
            return _brute_pairs(queries, self.points, r2)
        qcoords = self._cell_coords(queries)
        qidx_all = np.arange(len(queries))
        out_q, out_p, out_d = [], [], []
        span = np.arange(-k, k + 1)
        for dx in span:
            for dy in span:
                for dz in span:
                    keys = self._pack(qcoords + np.array([dx, dy, dz]))
                    slot = np.searchsorted(self.cell_keys, keys)
                    slot_c = np.minimum(slot, len(self.cell_keys) - 1)
                    hit = self.cell_keys[slot_c] == keys
                    if not hit.any():
                        continue
                    qi = qidx_all[hit]
                    start = self.cell_start[slot_c[hit]]
                    counts = self.cell_end[slot_c[hit]] - start
                    total = int(counts.sum())
                    rep_q = np.repeat(qi, counts)
                    within = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
                    pi = self.order[np.repeat(start, counts) + within]
                    d2 = squared_distances(queries[rep_q], self.points[pi])
                    keep = d2 <= r2
                    out_q.append(rep_q[keep])
                    out_p.append(pi[keep])
                    out_d.append(d2[keep])
        if not out_q:
            return empty
        return np.concatenate(out_q), np.concatenate(out_p), np.concatenate(out_d)

    def any_within(self, queries, radius: float) -> np.ndarray:
        queries = as_cloud(queries)
        qi, _, _ = self.pairs_within(queries, radius)
        return np.bincount(qi, minlength=len(queries)) > 0

    def nearest(self, queries, exclude_self: bool = False):
        """Exact nearest squared distances and indices for each query.

        With ``exclude_self`` the queries must be the indexed points
        themselves and each point's own index is skipped.
        """
        queries = as_cloud(queries)
        nq = len(queries)
        best_d2 = np.full(nq, np.inf)
        best_i = np.full(nq, -1, dtype=np.int64)
        if nq == 0:
            return best_d2, best_i
        pending = np.arange(nq)
        radius = self.cell_size
        max_k = int(self.dims.max()) + 1
        while len(pending):
            if len(self.points) < BRUTE_FORCE_BELOW or radius / self.cell_size > max_k:
                qi, pi, d2 = _brute_pairs(queries[pending], self.points, np.inf)
            else:
                qi, pi, d2 = self.pairs_within(queries[pending], radius)
            if exclude_self:
                keep = pi != pending[qi]
                qi, pi, d2 = qi[keep], pi[keep], d2[keep]
            # lexicographic: smallest distance, then smallest point index
            sel = np.lexsort((pi, d2, qi))
            qi, pi, d2 = qi[sel], pi[sel], d2[sel]
            first = np.ones(len(qi), dtype=bool)
            first[1:] = qi[1:] != qi[:-1]
            found = pending[qi[first]]
            best_d2[found] = d2[first]
            best_i[found] = pi[first]
            resolved = np.zeros(len(pending), dtype=bool)
            resolved[qi[first]] = True
            if len(self.points) < BRUTE_FORCE_BELOW or radius / self.cell_size > max_k:
                break
            pending = pending[~resolved]
            radius *= 2.0
        return best_d2, best_i


def _brute_pairs(queries: np.ndarray, points: np.ndarray, r2: float, chunk: int = 512):
    out_q, out_p, out_d = [], [], []
    for s in range(0, len(queries), chunk):
        d2 = squared_distances(queries[s:s + chunk, None, :], points[None, :, :])
        qi, pi = np.nonzero(d2 <= r2)
        out_q.append(qi + s)
        out_p.append(pi)
        out_d.append(d2[qi, pi])
    return np.concatenate(out_q), np.concatenate(out_p), np.concatenate(out_d)


def nearest_distance(query, cloud) -> float:
    """Exact Euclidean distance from ``query`` to the closest point of ``cloud``."""
    cloud = as_cloud(cloud)
    if len(cloud) == 0:
        raise ValueError("nearest_distance on an empty cloud")
    q = as_cloud(np.reshape(query, (1, 3)))
    if len(cloud) < BRUTE_FORCE_BELOW:
        return float(math.sqrt(squared_distances(q, cloud).min()))
    d2, _ = SpatialHashGrid(cloud).nearest(q)
    return float(math.sqrt(d2[0]))


def nearest_distances(queries, cloud) -> np.ndarray:
    cloud = as_cloud(cloud, allow_empty=False)
    d2, _ = SpatialHashGrid(cloud).nearest(queries)
    return np.sqrt(d2)


def default_epsilon(full, scale: float = 2.0) -> float:
    """``scale`` times the median nearest-neighbour spacing of ``full``."""
    full = as_cloud(full, allow_empty=False)
    if len(full) < 2:
        raise ValueError("need at least two points to estimate spacing")
    d2, _ = SpatialHashGrid(full).nearest(full, exclude_self=True)
    spacing = float(np.median(np.sqrt(d2)))
    if spacing <= 0:
        raise ValueError("cloud spacing is zero; duplicate points only")
    return scale * spacing


def covered_mask(partial, full, epsilon: float) -> np.ndarray:
    """Boolean mask over ``full``: points within ``epsilon`` of ``partial``."""
    full = as_cloud(full, allow_empty=False)
    partial = as_cloud(partial)
    if len(partial) == 0:
        return np.zeros(len(full), dtype=bool)
    return SpatialHashGrid(partial, cell_size=epsilon).any_within(full, epsilon)


def coverage_score(partial, full, params: CoverageParams) -> float:
    """Fraction of ``full`` lying within ``params.epsilon`` of ``partial``."""
    full = as_cloud(full, allow_empty=False)
    return float(np.count_nonzero(covered_mask(partial, full, params.epsilon))) / len(full)


def _camera_frame(view_dir: np.ndarray):
    forward = -view_dir / np.linalg.norm(view_dir)
    helper = np.array([0.0, 0.0, 1.0]) if abs(forward[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    right = np.cross(helper, forward)
    right /= np.linalg.norm(right)
    up = np.cross(forward, right)
    return forward, right, up


def _dot(rel: np.ndarray, axis: np.ndarray) -> np.ndarray:
    # fixed summation order so cell assignment does not depend on BLAS
    return rel[:, 0] * axis[0] + rel[:, 1] * axis[1] + rel[:, 2] * axis[2]


def visible_indices(full, viewpoint, params: CoverageParams, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Indices of ``full`` that survive a splatted spherical z-buffer.

    The camera sits at ``viewpoint`` looking at ``center``. Points are binned
    by (azimuth, elevation) into an ``angular_bins`` square grid spanning
    ``field_of_view``. Every point splats a disk of radius
    ``splat_scale * epsilon`` into the buffer; the depth it writes grows with
    angular offset by ``slope_allowance`` so that tilted surfaces do not
    occlude themselves. A point is kept when its range is within
    ``epsilon`` of the buffer value of its own cell.
    """
    full = as_cloud(full, allow_empty=False)
    eye = np.asarray(viewpoint, dtype=np.float64).reshape(3)
    center = np.asarray(center, dtype=np.float64).reshape(3)
    if np.allclose(eye, center):
        raise ValueError("viewpoint coincides with the look-at center")
    forward, right, up = _camera_frame(eye - center)
    rel = full - eye
    zf = _dot(rel, forward)
    half = math.radians(params.field_of_view) / 2.0
    bins = params.angular_bins
    cell_w = 2.0 * half / bins
    # continuous cell coordinates
    ca = (np.arctan2(_dot(rel, right), zf) + half) / cell_w
    ce = (np.arctan2(_dot(rel, up), zf) + half) / cell_w
    ia = np.floor(ca).astype(np.int64)
    ie = np.floor(ce).astype(np.int64)
    ok = (zf > 0) & (ia >= 0) & (ia < bins) & (ie >= 0) & (ie < bins)
    idx = np.nonzero(ok)[0]
    if len(idx) == 0:
        return idx
    ca, ce, ia, ie = ca[idx], ce[idx], ia[idx], ie[idx]
    depth = np.sqrt((rel[idx] * rel[idx]).sum(axis=1))
    rho = np.arctan2(params.splat_scale * params.epsilon, depth)
    k = int(math.ceil(rho.max() / cell_w))
    off = np.arange(-k, k + 1)
    shape = (len(idx), len(off), len(off))
    ta = np.broadcast_to(ia[:, None, None] + off[None, :, None], shape)
    te = np.broadcast_to(ie[:, None, None] + off[None, None, :], shape)
    # angular gap between each point and each target cell
    ga = np.maximum(0.0, np.maximum(ta - ca[:, None, None], ca[:, None, None] - (ta + 1)))
    ge = np.maximum(0.0, np.maximum(te - ce[:, None, None], ce[:, None, None] - (te + 1)))
    ang = np.sqrt(ga * ga + ge * ge) * cell_w
    hit = (ang <= rho[:, None, None]) & (ta >= 0) & (ta < bins) & (te >= 0) & (te < bins)
    src = np.broadcast_to(np.arange(len(idx))[:, None, None], shape)[hit]
    splat_depth = depth[src] * (1.0 + params.slope_allowance * np.tan(ang[hit]))
    buffer = np.full(bins * bins, np.inf)
    np.minimum.at(buffer, ta[hit] * bins + te[hit], splat_depth)
    return idx[depth <= buffer[ia * bins + ie] + params.epsilon]


def visible_points(full, viewpoint, params: CoverageParams, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    full = as_cloud(full, allow_empty=False)
    return full[visible_indices(full, viewpoint, params, center)]


def coverage_gain_vector(partial, full, sphere: ViewSphere, params: CoverageParams) -> np.ndarray:
    """Coverage increase obtained by adding each candidate view's visible points."""
    full = as_cloud(full, allow_empty=False)
    partial = as_cloud(partial)
    base = coverage_score(partial, full, params)
    gains = np.empty(sphere.n_views)
    for j in range(sphere.n_views):
        seen = visible_points(full, sphere.position(j), params, sphere.center)
        gains[j] = coverage_score(np.concatenate([partial, seen]), full, params) - base
    return gains


class CoverageIndex:
    """Coverage queries for partial clouds that are subsets of one full cloud.

    Partials are given as index arrays (or boolean masks) into ``full``.
    Neighbour pairs within ``epsilon`` are computed once, so each score is a
    single scatter over the pair list. Results agree with
    :func:`coverage_score` applied to ``full[indices]``.
    """

    def __init__(self, full, params: CoverageParams, sphere: ViewSphere | None = None):
        self.full = as_cloud(full, allow_empty=False)
        self.params = params
        grid = SpatialHashGrid(self.full, cell_size=params.epsilon)
        # pair (i, j): full point i is covered whenever j is in the partial
        self._cov, self._src, _ = grid.pairs_within(self.full, params.epsilon)
        self.sphere = sphere
        self.view_masks = None
        if sphere is not None:
            self.view_masks = np.zeros((sphere.n_views, len(self.full)), dtype=bool)
            for j in range(sphere.n_views):
                vis = visible_indices(self.full, sphere.position(j), params, sphere.center)
                self.view_masks[j, vis] = True

    def _as_mask(self, partial) -> np.ndarray:
        partial = np.asarray(partial)
        if partial.dtype == bool:
            return partial
        mask = np.zeros(len(self.full), dtype=bool)
        mask[partial.astype(np.int64)] = True
        return mask

    def covered(self, partial) -> np.ndarray:
        mask = self._as_mask(partial)
        hits = self._cov[mask[self._src]]
        return np.bincount(hits, minlength=len(self.full)) > 0

    def score(self, partial) -> float:
        return float(np.count_nonzero(self.covered(partial))) / len(self.full)

    def gains(self, partial) -> np.ndarray:
        if self.view_masks is None:
            raise ValueError("CoverageIndex was built without a view sphere")
        mask = self._as_mask(partial)
        base = self.score(mask)
        return np.array([self.score(mask | vm) - base for vm in self.view_masks])


def save_cloud_json(cloud, path) -> None:
    cloud = as_cloud(cloud)
    Path(path).write_text(json.dumps(cloud.tolist()))


def load_cloud_json(path) -> np.ndarray:
    return as_cloud(json.loads(Path(path).read_text()))


def save_cloud_xyz(cloud, path) -> None:
    cloud = as_cloud(cloud)
    lines = [f"{x!r} {y!r} {z!r}" for x, y, z in cloud.tolist()]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_cloud_xyz(path) -> np.ndarray:
    rows = []
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{n}: expected 3 coordinates, got {len(parts)}")
        rows.append([float(p) for p in parts])
    return as_cloud(rows)
