"""Slow, loop-based reference implementations used as test oracles."""
import math

import numpy as np


def brute_nearest(query, cloud):
    best = math.inf
    for p in cloud:
        best = min(best, math.dist(query, p))
    return best


def brute_covered(partial, full, eps):
    out = []
    for q in full:
        hit = False
        for p in partial:
            d2 = sum((a - b) * (a - b) for a, b in zip(q, p))
            if d2 <= eps * eps:
                hit = True
                break
        out.append(hit)
    return np.array(out, dtype=bool)


def brute_coverage(partial, full, eps):
    return int(brute_covered(partial, full, eps).sum()) / len(full)


def brute_visible(full, eye, params, center=(0.0, 0.0, 0.0)):
    """Splatted z-buffer by exhaustive enumeration of every (point, cell) pair."""
    eye = np.asarray(eye, dtype=float)
    center = np.asarray(center, dtype=float)
    view = eye - center
    fwd = -view / np.linalg.norm(view)
    helper = np.array([0.0, 0.0, 1.0]) if abs(fwd[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    right = np.cross(helper, fwd)
    right /= np.linalg.norm(right)
    up = np.cross(fwd, right)
    half = math.radians(params.field_of_view) / 2
    bins = params.angular_bins
    w = 2 * half / bins
    info = {}
    for i, p in enumerate(full):
        rel = [float(v) for v in np.asarray(p) - eye]
        dot = lambda axis: rel[0] * axis[0] + rel[1] * axis[1] + rel[2] * axis[2]
        zf = dot(fwd)
        if zf <= 0:
            continue
        ca = (math.atan2(dot(right), zf) + half) / w
        ce = (math.atan2(dot(up), zf) + half) / w
        a, e = math.floor(ca), math.floor(ce)
        if not (0 <= a < bins and 0 <= e < bins):
            continue
        depth = math.sqrt(float(((np.asarray(p) - eye) ** 2).sum()))
        info[i] = (ca, ce, a, e, depth)
    buffer = {}
    for i, (ca, ce, _, _, depth) in info.items():
        rho = math.atan2(params.splat_scale * params.epsilon, depth)
        for ta in range(bins):
            for te in range(bins):
                ga = max(0.0, ta - ca, ca - (ta + 1))
                ge = max(0.0, te - ce, ce - (te + 1))
                ang = math.sqrt(ga * ga + ge * ge) * w
                if ang <= rho:
                    d = depth * (1 + params.slope_allowance * math.tan(ang))
                    buffer[(ta, te)] = min(buffer.get((ta, te), math.inf), d)
    return sorted(i for i, (_, _, a, e, depth) in info.items() if depth <= buffer[(a, e)] + params.epsilon)


def brute_gains(partial, full, sphere, params):
    base = brute_coverage(partial, full, params.epsilon)
    out = []
    for j in range(sphere.n_views):
        vis = [full[i] for i in brute_visible(full, sphere.position(j), params, sphere.center)]
        out.append(brute_coverage(list(partial) + vis, full, params.epsilon) - base)
    return np.array(out)


def finite_difference(f, x, h=1e-6):
    """Central differences of scalar ``f`` with respect to every entry of array ``x`` (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        k = it.multi_index
        old = x[k]
        x[k] = old + h
        fp = f()
        x[k] = old - h
        fm = f()
        x[k] = old
        g[k] = (fp - fm) / (2 * h)
    return g


def gradient_check(seed, h=1e-5):
    """Worst per-tensor relative error between analytic and central-difference gradients.

    Architecture sizes, inputs, biases, dropout masks and weight decay are
    all drawn from ``seed``.
    """
    from bayes_nbv.network import Architecture, forward, init_params, loss, loss_and_grad, make_plan

    rng = np.random.default_rng(seed)
    n_views = int(rng.integers(2, 6))
    arch = Architecture.default(n_views=n_views, dropout_rate=float(rng.choice([0.0, 0.3, 0.5])),
                                point_widths=(3, int(rng.integers(3, 7)), int(rng.integers(3, 8))),
                                head_hidden=tuple(int(w) for w in rng.integers(3, 7, size=rng.integers(1, 3))))
    params = init_params(arch, seed)
    for b in params.biases:
        b[:] = rng.normal(scale=0.1, size=b.shape)
    batch, n_pts = int(rng.integers(1, 4)), int(rng.integers(4, 12))
    x = rng.normal(size=(batch, n_pts, 3))
    v = (rng.random((batch, n_views)) < 0.4).astype(float)
    y = rng.random((batch, n_views))
    plan = make_plan(arch, batch, n_pts, rng) if arch.dropout_rate > 0 else None
    lam = float(rng.choice([0.0, 1e-4, 1e-2]))
    _, gw, gb = loss_and_grad(params, x, v, y, plan, lam)
    worst = 0.0
    for t, g in zip(params.tensors(), [*gw, *gb]):
        fd = finite_difference(lambda: loss(params, y, forward(params, x, v, plan)[0], lam), t, h)
        denom = max(np.linalg.norm(fd) + np.linalg.norm(g), 1e-12)
        worst = max(worst, float(np.linalg.norm(fd - g) / denom))
    return worst
