"""Coverage score, per-view visibility and the coverage-gain vector for one shape.

Run: python3 demos/01_coverage_and_views.py
"""
import numpy as np

from bayes_nbv.geometry import (CoverageParams, coverage_gain_vector, coverage_score, default_epsilon,
                                make_view_sphere, visible_points)
from bayes_nbv.shapes import generate_shape

full = generate_shape("torus", seed=1, n_points=1024)
eps = default_epsilon(full)
params = CoverageParams(eps)
sphere = make_view_sphere(33, radius=5.0)
print(f"torus with {len(full)} points, eps = {eps:.4f} (2x median spacing)")

# what each candidate camera can see
seen = [len(visible_points(full, sphere.position(j), params)) for j in range(sphere.n_views)]
print(f"visible points per view: min {min(seen)}, max {max(seen)}, mean {np.mean(seen):.0f}")

# scan greedily for three views and watch the gain vector shrink
partial = np.zeros((0, 3))
for step in range(3):
    gains = coverage_gain_vector(partial, full, sphere, params)
    best = int(np.argmax(gains))
    partial = np.vstack([partial, visible_points(full, sphere.position(best), params)])
    print(f"step {step}: best view {best:2d} gains {gains[best]:.3f} -> coverage {coverage_score(partial, full, params):.3f}")
