"""Parametric surface families used as a stand-in for a mesh dataset.

Every family is built around its own analytic centre, sampled on the
surface (area-weighted across pieces), scaled to unit bounding radius and
then rotated by a seeded random rotation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .seeding import seed_sequence

KNOWN_FAMILIES = ("sphere", "box", "cylinder", "torus", "cone", "ellipsoid", "capsule", "perlin-blob")
NOVEL_FAMILIES = ("pyramid", "octahedron", "hemisphere", "prism", "spindle", "dumbbell", "mushroom", "lshape")
FAMILIES = KNOWN_FAMILIES + NOVEL_FAMILIES


@dataclass
class ShapeInstance:
    family: str
    seed: int
    params: dict
    rotation: np.ndarray = field(repr=False)


# ---------------------------------------------------------------- primitives

def _unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sphere(rng, n, radius, center=(0.0, 0.0, 0.0)):
    return np.asarray(center) + radius * _unit_vectors(rng, n)


def _disk(rng, n, radius, z, inner=0.0):
    r = np.sqrt(rng.uniform(inner ** 2, radius ** 2, n))
    t = rng.uniform(0, 2 * math.pi, n)
    return np.stack([r * np.cos(t), r * np.sin(t), np.full(n, float(z))], axis=1)


def _tube(rng, n, radius, z0, z1):
    t = rng.uniform(0, 2 * math.pi, n)
    return np.stack([radius * np.cos(t), radius * np.sin(t), rng.uniform(z0, z1, n)], axis=1)


def _cone_side(rng, n, radius, z_base, z_apex):
    # density grows linearly with distance from the apex
    s = np.sqrt(rng.uniform(0, 1, n))
    t = rng.uniform(0, 2 * math.pi, n)
    r = s * radius
    return np.stack([r * np.cos(t), r * np.sin(t), z_apex + s * (z_base - z_apex)], axis=1)


def _triangles(rng, n, tris):
    tris = np.asarray(tris, dtype=np.float64)
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    pick = rng.choice(len(tris), size=n, p=area / area.sum())
    u = rng.uniform(0, 1, n)
    v = rng.uniform(0, 1, n)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    return a[pick] + u[:, None] * (b - a)[pick] + v[:, None] * (c - a)[pick]


def _box_tris(lo, hi):
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    corners = np.array([[(hi if (k >> i) & 1 else lo)[i] for i in range(3)] for k in range(8)])
    faces = [(0, 2, 6, 4), (1, 3, 7, 5), (0, 1, 5, 4), (2, 3, 7, 6), (0, 1, 3, 2), (4, 5, 7, 6)]
    tris = []
    for q in faces:
        tris.append(corners[[q[0], q[1], q[2]]])
        tris.append(corners[[q[0], q[2], q[3]]])
    return tris


def _mixture(rng, n, pieces):
    """Draw ``n`` points from (area, sampler) pieces proportionally to area."""
    areas = np.array([a for a, _ in pieces], dtype=np.float64)
    counts = rng.multinomial(n, areas / areas.sum())
    parts = [sampler(rng, int(k)) for (_, sampler), k in zip(pieces, counts) if k > 0]
    return np.concatenate(parts)


def _union(rng, n, pieces, insides):
    """Surface of a union of solids: drop samples inside any other solid."""
    out = np.zeros((0, 3))
    while len(out) < n:
        pts = _mixture(rng, 2 * n, pieces)
        inside = np.zeros(len(pts), dtype=bool)
        for test in insides:
            inside |= test(pts)
        out = np.concatenate([out, pts[~inside]])
    return out[:n]


def _random_rotation(rng):
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


# ---------------------------------------------------------------- families

def _draw_params(family, rng):
    u = rng.uniform
    if family == "sphere":
        return {"radius": u(0.5, 1.5)}
    if family == "box":
        return {"size": [u(0.4, 2.0), u(0.4, 2.0), u(0.4, 2.0)]}
    if family == "cylinder":
        return {"radius": u(0.3, 1.0), "height": u(0.5, 2.5)}
    if family == "torus":
        major = u(0.6, 1.2)
        return {"major": major, "minor": u(0.15, 0.45) * major}
    if family == "cone":
        return {"radius": u(0.4, 1.2), "height": u(0.6, 2.0)}
    if family == "ellipsoid":
        return {"axes": [u(0.4, 1.5), u(0.4, 1.5), u(0.4, 1.5)]}
    if family == "capsule":
        return {"radius": u(0.25, 0.7), "length": u(0.5, 2.0)}
    if family == "perlin-blob":
        k = 6
        return {
            "amplitude": u(0.1, 0.3),
            "frequencies": rng.normal(scale=2.0, size=(k, 3)).tolist(),
            "phases": u(0, 2 * math.pi, k).tolist(),
        }
    if family == "pyramid":
        return {"base": u(0.6, 2.0), "height": u(0.6, 2.0)}
    if family == "octahedron":
        return {"axes": [u(0.5, 1.5), u(0.5, 1.5), u(0.5, 1.5)]}
    if family == "hemisphere":
        return {"radius": u(0.5, 1.5)}
    if family == "prism":
        return {"side": u(0.6, 2.0), "length": u(0.5, 2.5)}
    if family == "spindle":
        return {"radius": u(0.3, 1.0), "height": u(0.8, 2.5)}
    if family == "dumbbell":
        return {"ball": u(0.3, 0.6), "rod": u(0.08, 0.2), "length": u(1.0, 2.5)}
    if family == "mushroom":
        return {"cap": u(0.6, 1.2), "stem": u(0.12, 0.35), "stem_height": u(0.4, 1.2)}
    if family == "lshape":
        return {"arm": u(0.8, 2.0), "width": u(0.3, 0.7), "depth": u(0.3, 1.0)}
    raise ValueError(f"unknown shape family {family!r}")


def _check_positive(params):
    for key, val in params.items():
        if key in ("frequencies", "phases"):
            continue
        vals = val if isinstance(val, list) else [val]
        if not all(np.isfinite(v) and v > 0 for v in vals):
            raise ValueError(f"degenerate shape parameter {key}={val!r}")


def _surface(family, p, rng, n):
    """Surface samples centred on the family's analytic centre."""
    pi = math.pi
    if family == "sphere":
        return _sphere(rng, n, p["radius"])
    if family == "box":
        half = np.asarray(p["size"]) / 2
        return _triangles(rng, n, _box_tris(-half, half))
    if family == "cylinder":
        r, h = p["radius"], p["height"]
        return _mixture(rng, n, [
            (2 * pi * r * h, lambda g, k: _tube(g, k, r, -h / 2, h / 2)),
            (pi * r * r, lambda g, k: _disk(g, k, r, -h / 2)),
            (pi * r * r, lambda g, k: _disk(g, k, r, h / 2)),
        ])
    if family == "torus":
        big, small = p["major"], p["minor"]
        out = np.zeros((0, 3))
        while len(out) < n:
            a = rng.uniform(0, 2 * pi, 2 * n)
            b = rng.uniform(0, 2 * pi, 2 * n)
            keep = rng.uniform(0, 1, 2 * n) < (big + small * np.cos(b)) / (big + small)
            a, b = a[keep], b[keep]
            ring = big + small * np.cos(b)
            out = np.concatenate([out, np.stack([ring * np.cos(a), ring * np.sin(a), small * np.sin(b)], axis=1)])
        return out[:n]
    if family == "cone":
        r, h = p["radius"], p["height"]
        slant = math.hypot(r, h)
        return _mixture(rng, n, [
            (pi * r * slant, lambda g, k: _cone_side(g, k, r, -h / 2, h / 2)),
            (pi * r * r, lambda g, k: _disk(g, k, r, -h / 2)),
        ])
    if family == "ellipsoid":
        axes = np.asarray(p["axes"])
        out = np.zeros((0, 3))
        bound = (1.0 / axes).max()
        while len(out) < n:
            u = _unit_vectors(rng, 2 * n)
            w = np.linalg.norm(u / axes, axis=1) / bound
            keep = rng.uniform(0, 1, 2 * n) < w
            out = np.concatenate([out, u[keep] * axes])
        return out[:n]
    if family == "capsule":
        r, length = p["radius"], p["length"]
        return _mixture(rng, n, [
            (2 * pi * r * length, lambda g, k: _tube(g, k, r, -length / 2, length / 2)),
            (4 * pi * r * r, lambda g, k: _capsule_caps(g, k, r, length / 2)),
        ])
    if family == "perlin-blob":
        d = _unit_vectors(rng, n)
        freq = np.asarray(p["frequencies"])
        phase = np.asarray(p["phases"])
        bumps = np.sin(d @ freq.T + phase).mean(axis=1)
        return d * (1.0 + p["amplitude"] * bumps)[:, None]
    if family == "pyramid":
        b, h = p["base"] / 2, p["height"]
        base = np.array([[-b, -b, -h / 2], [b, -b, -h / 2], [b, b, -h / 2], [-b, b, -h / 2]])
        apex = np.array([0.0, 0.0, h / 2])
        tris = [base[[0, 1, 2]], base[[0, 2, 3]]]
        tris += [np.stack([base[i], base[(i + 1) % 4], apex]) for i in range(4)]
        return _triangles(rng, n, tris)
    if family == "octahedron":
        ax = np.asarray(p["axes"])
        tris = []
        for sx in (-1, 1):
            for sy in (-1, 1):
                for sz in (-1, 1):
                    tris.append(np.diag([sx * ax[0], sy * ax[1], sz * ax[2]]))
        return _triangles(rng, n, tris)
    if family == "hemisphere":
        r = p["radius"]
        shift = np.array([0.0, 0.0, -r / 2])
        return shift + _mixture(rng, n, [
            (2 * pi * r * r, lambda g, k: _dome(g, k, r)),
            (pi * r * r, lambda g, k: _disk(g, k, r, 0.0)),
        ])
    if family == "prism":
        s, length = p["side"], p["length"]
        tri = np.array([[0.0, s / math.sqrt(3)], [-s / 2, -s / (2 * math.sqrt(3))], [s / 2, -s / (2 * math.sqrt(3))]])
        lo = np.c_[tri, np.full(3, -length / 2)]
        hi = np.c_[tri, np.full(3, length / 2)]
        tris = [lo, hi]
        for i in range(3):
            j = (i + 1) % 3
            tris.append(np.stack([lo[i], lo[j], hi[j]]))
            tris.append(np.stack([lo[i], hi[j], hi[i]]))
        return _triangles(rng, n, tris)
    if family == "spindle":
        r, h = p["radius"], p["height"]
        return _mixture(rng, n, [
            (1.0, lambda g, k: _cone_side(g, k, r, 0.0, h / 2)),
            (1.0, lambda g, k: _cone_side(g, k, r, 0.0, -h / 2)),
        ])
    if family == "dumbbell":
        ball, rod, length = p["ball"], p["rod"], p["length"]
        c0 = np.array([0.0, 0.0, -length / 2])
        c1 = np.array([0.0, 0.0, length / 2])
        return _union(rng, n, [
            (4 * pi * ball ** 2, lambda g, k: _sphere(g, k, ball, c0)),
            (4 * pi * ball ** 2, lambda g, k: _sphere(g, k, ball, c1)),
            (2 * pi * rod * length, lambda g, k: _tube(g, k, rod, -length / 2, length / 2)),
        ], [
            lambda x: np.linalg.norm(x - c0, axis=1) < ball * (1 - 1e-9),
            lambda x: np.linalg.norm(x - c1, axis=1) < ball * (1 - 1e-9),
            lambda x: (np.hypot(x[:, 0], x[:, 1]) < rod * (1 - 1e-9)) & (np.abs(x[:, 2]) < length / 2),
        ])
    if family == "mushroom":
        cap, stem, sh = p["cap"], p["stem"], p["stem_height"]
        shift = np.array([0.0, 0.0, (sh - cap) / 2])
        pts = _mixture(rng, n, [
            (2 * pi * cap * cap, lambda g, k: _dome(g, k, cap)),
            (pi * (cap * cap - stem * stem), lambda g, k: _disk(g, k, cap, 0.0, inner=stem)),
            (2 * pi * stem * sh, lambda g, k: _tube(g, k, stem, -sh, 0.0)),
            (pi * stem * stem, lambda g, k: _disk(g, k, stem, -sh)),
        ])
        return pts + shift
    if family == "lshape":
        arm, w, d = p["arm"], p["width"], p["depth"]
        lo0, hi0 = np.array([0.0, 0.0, 0.0]), np.array([arm, w, d])
        lo1, hi1 = np.array([0.0, 0.0, 0.0]), np.array([w, arm, d])
        center = np.array([arm / 2, arm / 2, d / 2])

        def inside(lo, hi):
            return lambda x: np.all((x > lo + 1e-12) & (x < hi - 1e-12), axis=1)

        area0 = 2 * (arm * w + arm * d + w * d)
        pts = _union(rng, n, [
            (area0, lambda g, k: _triangles(g, k, _box_tris(lo0, hi0))),
            (area0, lambda g, k: _triangles(g, k, _box_tris(lo1, hi1))),
        ], [inside(lo0, hi0), inside(lo1, hi1)])
        return pts - center
    raise ValueError(f"unknown shape family {family!r}")


def _dome(rng, n, r):
    d = _unit_vectors(rng, n)
    d[:, 2] = np.abs(d[:, 2])
    return r * d


def _capsule_caps(rng, n, r, half):
    d = _unit_vectors(rng, n)
    pts = r * d
    pts[:, 2] += np.where(d[:, 2] >= 0, half, -half)
    return pts


def shape_instance(family: str, seed: int) -> ShapeInstance:
    if family not in FAMILIES:
        raise ValueError(f"unknown shape family {family!r}")
    rng = np.random.default_rng(seed_sequence(seed, "data", "shape-params", family))
    params = _draw_params(family, rng)
    return ShapeInstance(family, int(seed), params, _random_rotation(rng))


def generate_shape(family: str, seed: int, n_points: int = 1024, params: dict | None = None) -> np.ndarray:
    """Surface point cloud for one (family, seed), unit bounding radius.

    ``params`` overrides the seeded family parameters; the rotation is
    still drawn from ``seed``.
    """
    if n_points < 64:
        raise ValueError("n_points must be >= 64")
    inst = shape_instance(family, seed)
    if params is not None:
        inst.params = dict(params)
    _check_positive(inst.params)
    rng = np.random.default_rng(seed_sequence(seed, "data", "shape-surface", family))
    pts = _surface(family, inst.params, rng, n_points)
    scale = np.linalg.norm(pts, axis=1).max()
    if not scale > 0:
        raise ValueError("degenerate surface")
    return (pts / scale) @ inst.rotation.T
