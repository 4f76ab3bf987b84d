"""Simulated scans turned into supervised samples, written and read back as NDJSON.

Run: python3 demos/02_dataset.py [out_dir]
"""
import sys
from collections import Counter

import numpy as np

from bayes_nbv.dataset import DataConfig, build_dataset, read_dataset

out = sys.argv[1] if len(sys.argv) > 1 else "demo_data"
cfg = DataConfig(master_seed=0, n_points=512, steps=4,
                 per_family={"train": 2, "valid": 1, "test": 1, "test_novel": 1})
split = build_dataset(cfg, out)
print("models per split:", {k: len(split.ids(k)) for k in ("train", "valid", "test", "test_novel")})

samples = list(read_dataset(f"{out}/train.ndjson"))
print("samples per step:", dict(Counter(s.step for s in samples)))
s = samples[1]
print(f"{s.model_id} ({s.family}) step {s.step}: partial {s.partial.shape}, visited {np.flatnonzero(s.view_state)}")
print(f"gt range {s.gt.min():.3f}..{s.gt.max():.3f}, best view {int(np.argmax(s.gt))}")
