import json

import numpy as np
import pytest

from bayes_nbv.dataset import (DataConfig, DatasetError, NbvSample, build_dataset, load_manifest,
                               read_dataset, resample_indices, scan_trace, simulate_scan_sequence,
                               stack_samples, write_dataset)
from bayes_nbv.geometry import (CoverageIndex, CoverageParams, coverage_gain_vector, coverage_score,
                                default_epsilon, make_view_sphere, visible_indices)
from bayes_nbv.seeding import derive_seed, rng_for
from bayes_nbv.shapes import FAMILIES, KNOWN_FAMILIES, NOVEL_FAMILIES, generate_shape, shape_instance

from .oracles import brute_gains, brute_visible


class TestShapes:
    @pytest.mark.parametrize("family", FAMILIES)
    def test_unit_radius_and_deterministic(self, family):
        a = generate_shape(family, 5, 300)
        b = generate_shape(family, 5, 300)
        assert a.shape == (300, 3)
        np.testing.assert_array_equal(a, b)
        assert np.linalg.norm(a, axis=1).max() == pytest.approx(1.0, abs=1e-12)
        assert np.all(np.isfinite(a))

    def test_families_partition(self):
        assert len(KNOWN_FAMILIES) == 8 and len(NOVEL_FAMILIES) == 8
        assert not set(KNOWN_FAMILIES) & set(NOVEL_FAMILIES)

    def test_seeds_differ(self):
        assert not np.array_equal(generate_shape("torus", 1, 200), generate_shape("torus", 2, 200))

    @pytest.mark.parametrize("seed", [0, 1, 7])
    def test_sphere_radius(self, seed):
        pts = generate_shape("sphere", seed, 500)
        np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-9)

    @pytest.mark.parametrize("seed", [0, 3, 9])
    def test_box_points_on_faces(self, seed):
        pts = generate_shape("box", seed, 1000)
        local = pts @ shape_instance("box", seed).rotation
        half = np.abs(local).max(axis=0)
        on_face = np.abs(np.abs(local) - half) <= 1e-9
        assert on_face.any(axis=1).all()

    def test_rejects_small_and_degenerate(self):
        with pytest.raises(ValueError):
            generate_shape("sphere", 0, 10)
        with pytest.raises(ValueError):
            generate_shape("cylinder", 0, 100, params={"radius": 0.0, "height": 1.0})
        with pytest.raises(ValueError):
            generate_shape("teapot", 0, 100)


@pytest.fixture(scope="module")
def scene():
    full = generate_shape("cylinder", 2, 400)
    params = CoverageParams(default_epsilon(full))
    return full, params, make_view_sphere(33)


class TestScan:
    def test_single_step(self, scene):
        full, params, sphere = scene
        s = simulate_scan_sequence(full, sphere, params, 1, seed=3, n_in=64)
        assert len(s) == 1 and s[0].view_state.sum() == 1

    def test_sample_invariants(self, scene):
        full, params, sphere = scene
        trace = scan_trace(full, sphere, params, 6, "mixed", seed=1, n_in=128)
        for k, s in enumerate(trace.samples):
            assert s.partial.shape == (128, 3)
            assert s.view_state.sum() == k + 1
            assert np.all((s.gt >= 0) & (s.gt <= 1))
        assert np.all(np.diff(trace.coverage) >= 0)
        assert len(set(trace.views)) == len(trace.views)

    def test_gt_round_trip(self, scene, tmp_path):
        full, params, sphere = scene
        samples = simulate_scan_sequence(full, sphere, params, 4, "greedy", seed=5, n_in=256)
        write_dataset(samples, tmp_path / "s.ndjson")
        for s in read_dataset(tmp_path / "s.ndjson"):
            np.testing.assert_allclose(coverage_gain_vector(s.partial, full, sphere, params), s.gt, atol=1e-9)

    def test_greedy_first_move(self, scene):
        full, params, sphere = scene
        trace = scan_trace(full, sphere, params, 2, "greedy", seed=8)
        gt0 = np.where(trace.samples[0].view_state > 0, -np.inf, trace.samples[0].gt)
        assert trace.views[1] == int(np.argmax(gt0))

    def test_greedy_beats_single_views(self, scene):
        full, params, sphere = scene
        index = CoverageIndex(full, params, sphere)
        best_single = max(index.score(m) for m in index.view_masks)
        for seed in range(3):
            trace = scan_trace(full, sphere, params, 6, "greedy", seed=seed, index=index)
            assert trace.coverage[-1] >= best_single

    def test_random_policy_avoids_revisits(self, scene):
        full, params, sphere = scene
        trace = scan_trace(full, sphere, params, 10, "random", seed=2)
        assert len(set(trace.views)) == 10

    def test_toy_cloud_matches_hand_trace(self):
        full = np.array([[0.9, 0, 0], [-0.9, 0, 0], [0, 0.9, 0], [0, 0, 0.9], [0, 0, -0.9]])
        params = CoverageParams(0.3, angular_bins=8, field_of_view=60.0)
        sphere = make_view_sphere(4, 5.0)
        trace = scan_trace(full, sphere, params, 2, "greedy", seed=0, n_in=8)
        seen = set()
        for k, s in enumerate(trace.samples):
            seen |= set(brute_visible(full, sphere.position(trace.views[k]), params))
            assert {tuple(p) for p in s.partial} == {tuple(full[i]) for i in seen}
            np.testing.assert_array_equal(s.gt, brute_gains(full[sorted(seen)], full, sphere, params))
        masked = np.where(trace.samples[0].view_state > 0, -np.inf, trace.samples[0].gt)
        assert trace.views[1] == int(np.argmax(masked))

    def test_bad_arguments(self, scene):
        full, params, sphere = scene
        with pytest.raises(ValueError):
            scan_trace(full, sphere, params, 0)
        with pytest.raises(ValueError):
            scan_trace(full, sphere, params, 2, policy="lazy")

    def test_resample(self):
        rng = np.random.default_rng(0)
        big = resample_indices(np.arange(500), 256, rng)
        assert len(big) == 256 and len(set(big.tolist())) == 256
        small = resample_indices(np.arange(10), 256, rng)
        assert len(small) == 256 and set(small.tolist()) == set(range(10))


SMALL = dict(n_points=256, n_in=64, steps=3, n_views=12, known_families=["sphere", "box"],
             novel_families=["pyramid"], per_family={"train": 2, "valid": 1, "test": 1, "test_novel": 1})


class TestBuild:
    def test_counts_splits_and_manifest(self, tmp_path):
        split = build_dataset(DataConfig(**SMALL), tmp_path)
        train = list(read_dataset(tmp_path / "train.ndjson", 64))
        assert len(train) == 2 * 2 * 3
        groups = [set(split.train), set(split.valid), set(split.test), set(split.test_novel)]
        for i in range(4):
            for j in range(i + 1, 4):
                assert not groups[i] & groups[j]
        fams = {split.models[m]["family"] for m in split.test_novel}
        assert fams == {"pyramid"}
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert {"train", "valid", "test", "test_novel", "config"} <= set(manifest)
        assert load_manifest(tmp_path / "manifest.json").train == split.train

    def test_counts_arithmetic(self, tmp_path):
        cfg = DataConfig(n_points=128, n_in=32, steps=4, per_family={"train": 2, "valid": 0, "test": 0, "test_novel": 0})
        build_dataset(cfg, tmp_path)
        assert sum(1 for _ in open(tmp_path / "train.ndjson")) == 8 * 2 * 4

    def test_byte_identical_rebuild(self, tmp_path):
        build_dataset(DataConfig(**SMALL), tmp_path / "a")
        build_dataset(DataConfig(**SMALL), tmp_path / "b")
        for name in ("train.ndjson", "valid.ndjson", "test.ndjson", "test_novel.ndjson", "manifest.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_overlap_rejected(self, tmp_path):
        with pytest.raises(DatasetError):
            build_dataset(DataConfig(known_families=["sphere"], novel_families=["sphere"]), tmp_path)

    def test_stack(self, tmp_path):
        build_dataset(DataConfig(**SMALL), tmp_path)
        pts, vs, gt = stack_samples(list(read_dataset(tmp_path / "valid.ndjson")))
        assert pts.shape == (6, 64, 3) and vs.shape == gt.shape == (6, 12)


class TestReadValidation:
    def _write(self, tmp_path, rec):
        good = NbvSample("m", "sphere", 0, np.zeros((4, 3)), np.array([1, 0]), np.array([0.0, 0.5])).to_record()
        good.update(rec)
        p = tmp_path / "d.ndjson"
        p.write_text(json.dumps(NbvSample("m", "sphere", 0, np.zeros((4, 3)), np.array([1, 0]),
                                          np.array([0.0, 0.5])).to_record()) + "\n" + json.dumps(good) + "\n")
        return p

    @pytest.mark.parametrize("rec, field", [
        ({"gt": [0.0, 1.5]}, "gt"),
        ({"view_state": [0, 0]}, "view_state"),
        ({"partial": [[0, 0]]}, "partial"),
        ({"step": -1}, "step"),
        ({"gt": [0.1]}, "gt"),
    ])
    def test_errors_name_line_and_field(self, tmp_path, rec, field):
        with pytest.raises(DatasetError, match=rf":2:.*{field}"):
            list(read_dataset(self._write(tmp_path, rec)))

    def test_missing_field(self, tmp_path):
        p = tmp_path / "d.ndjson"
        p.write_text('{"model_id": "m"}\n')
        with pytest.raises(DatasetError, match=":1:.*family"):
            list(read_dataset(p))

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "d.ndjson"
        p.write_text("{oops\n")
        with pytest.raises(DatasetError, match=":1:"):
            list(read_dataset(p))

    def test_wrong_size(self, tmp_path):
        with pytest.raises(DatasetError, match="partial"):
            list(read_dataset(self._write(tmp_path, {}), n_in=5))


class TestSeeding:
    def test_streams_are_independent_and_stable(self):
        a = rng_for(1, "data", "x").random(3)
        np.testing.assert_array_equal(a, rng_for(1, "data", "x").random(3))
        assert not np.array_equal(a, rng_for(1, "init", "x").random(3))
        assert derive_seed(1, "mc", "m", 2) == derive_seed(1, "mc", "m", 2)
        assert derive_seed(1, "mc", "m", 2) != derive_seed(2, "mc", "m", 2)

    def test_unknown_stream(self):
        with pytest.raises(KeyError):
            rng_for(0, "bogus")
