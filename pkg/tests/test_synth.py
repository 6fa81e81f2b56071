"""Synthetic phantoms, smooth ground-truth fields, pairs, and datasets."""
import numpy as np
import pytest

from foundreg import fields, metrics, synth


CARDIAC = synth.PhantomSpec((64, 64, 16), "cardiac-like", 3, 0.06)
ABDOMEN = synth.PhantomSpec((64, 64, 16), "abdomen-like", 3, 0.06)


class TestGenPhantom:
    def test_deterministic(self):
        v1, s1 = synth.gen_phantom(CARDIAC, 5)
        v2, s2 = synth.gen_phantom(CARDIAC, 5)
        assert np.array_equal(v1.data, v2.data)
        assert np.array_equal(s1.labels, s2.labels)

    def test_cardiac_nested_regions(self):
        _, s = synth.gen_phantom(CARDIAC, 3)
        for l in (1, 2):
            outer = s.labels >= l
            inner = s.labels >= l + 1
            assert inner.any()
            assert (inner <= outer).all()
            assert inner.sum() < outer.sum()

    def test_background_majority(self):
        for spec in (CARDIAC, ABDOMEN):
            for seed in range(3):
                _, s = synth.gen_phantom(spec, seed)
                assert (s.labels == 0).mean() > 0.5

    def test_abdomen_disjoint_blobs(self):
        _, s = synth.gen_phantom(ABDOMEN, 2)
        assert set(np.unique(s.labels)) == {0, 1, 2, 3}

    def test_too_many_labels_for_shape(self):
        spec = synth.PhantomSpec((8, 8, 4), "abdomen-like", 30, 0.0)
        with pytest.raises(ValueError):
            synth.gen_phantom(spec, 0)

    def test_family_histogram_separation(self):
        # the two families are a genuine domain shift: between-family
        # histogram distance exceeds the within-family spread
        def hist(vol):
            h, _ = np.histogram(vol.data, bins=16, range=(-0.2, 1.2), density=True)
            return h / h.sum()

        hc = [hist(synth.gen_phantom(CARDIAC, s)[0]) for s in range(6)]
        ha = [hist(synth.gen_phantom(ABDOMEN, s)[0]) for s in range(6)]
        mean_c, mean_a = np.mean(hc, axis=0), np.mean(ha, axis=0)
        between = np.abs(mean_c - mean_a).sum()
        within = max(
            max(np.abs(h - mean_c).sum() for h in hc),
            max(np.abs(h - mean_a).sum() for h in ha),
        )
        assert between > within


class TestGenSmoothField:
    def test_zero_magnitude(self):
        f = synth.gen_smooth_field((16, 16, 8), 0.0, 4.0, 3)
        assert not f.disp.any()

    def test_max_norm_contract(self):
        f = synth.gen_smooth_field((32, 32, 16), 5.0, 6.0, 9)
        norms = np.sqrt((f.disp.astype(np.float64) ** 2).sum(axis=0))
        assert abs(norms.max() - 5.0) <= 1e-5

    def test_deterministic(self):
        a = synth.gen_smooth_field((16, 16, 8), 2.0, 4.0, 11)
        b = synth.gen_smooth_field((16, 16, 8), 2.0, 4.0, 11)
        assert np.array_equal(a.disp, b.disp)

    def test_smoothness_monotone_in_sigma(self):
        # mean squared forward difference shrinks as sigma doubles (seed-averaged)
        def roughness(sigma):
            vals = []
            for seed in range(10):
                f = synth.gen_smooth_field((24, 24, 12), 3.0, sigma, seed)
                u = f.disp.astype(np.float64)
                vals.append(np.mean([np.mean(np.diff(u, axis=a) ** 2) for a in (1, 2, 3)]))
            return np.mean(vals)

        assert roughness(4.0) > roughness(8.0)

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            synth.gen_smooth_field((8, 8, 8), -1.0, 4.0, 0)
        with pytest.raises(ValueError):
            synth.gen_smooth_field((8, 8, 8), 1.0, 0.0, 0)


class TestMakePair:
    def test_construction_invariant(self):
        pair = synth.make_pair(CARDIAC, 6.0, 8.0, 17)
        rewarped = fields.warp_volume(pair.fixed, pair.gt_field, "trilinear")
        assert np.array_equal(rewarped.data, pair.moving.data)
        reseg = fields.warp_segmentation(pair.fixed_seg, pair.gt_field)
        assert np.array_equal(reseg.labels, pair.moving_seg.labels)

    def test_zero_magnitude_pair_is_identical(self):
        pair = synth.make_pair(CARDIAC, 0.0, 8.0, 4)
        assert np.array_equal(pair.fixed.data, pair.moving.data)
        assert metrics.dice_score(pair.fixed_seg, pair.moving_seg)[1] == 100.0

    def test_epe_of_identity_is_mean_gt_norm(self):
        pair = synth.make_pair(CARDIAC, 4.0, 8.0, 21)
        zero = fields.identity_field(pair.fixed.shape)
        expected = np.sqrt((pair.gt_field.disp.astype(np.float64) ** 2).sum(axis=0)).mean()
        assert metrics.endpoint_error(zero, pair.gt_field) == pytest.approx(expected, rel=1e-6)

    def test_initial_dice_decreases_with_magnitude(self):
        # seed-averaged over 10 seeds, magnitudes 0 / 2 / 4 / 8
        means = []
        for mag in (0.0, 2.0, 4.0, 8.0):
            vals = [
                metrics.dice_score(p.fixed_seg, p.moving_seg)[1]
                for p in (synth.make_pair(CARDIAC, mag, 8.0, s) for s in range(10))
            ]
            means.append(np.mean(vals))
        assert all(a >= b for a, b in zip(means, means[1:]))
        assert means[0] == 100.0


class TestDataset:
    def test_write_and_load(self, tmp_path):
        spec = synth.DatasetSpec(
            families=("cardiac-like", "abdomen-like"),
            shape=(24, 24, 8),
            labels=2,
            max_magnitude=2.0,
            smooth_sigma=4.0,
            n_train=3,
            n_val=1,
            n_test=2,
        )
        manifest = synth.write_dataset(tmp_path / "ds", spec, seed=3)
        assert len(manifest["pairs"]) == 6
        # interleaved families for hybrid sets
        fams = [e["family"] for e in manifest["pairs"]]
        assert fams[0] != fams[1]
        loaded = synth.load_manifest(tmp_path / "ds")
        assert loaded == manifest
        assert len(synth.split_entries(loaded, "train")) == 3
        pair = synth.load_pair(tmp_path / "ds", loaded["pairs"][0])
        rewarped = fields.warp_volume(pair.fixed, pair.gt_field)
        assert np.array_equal(rewarped.data, pair.moving.data)

    def test_rerun_byte_identical(self, tmp_path):
        spec = synth.DatasetSpec(families=("cardiac-like",), shape=(16, 16, 8), labels=2,
                                 max_magnitude=2.0, smooth_sigma=4.0, n_train=1, n_val=0, n_test=1)
        synth.write_dataset(tmp_path / "a", spec, seed=5)
        synth.write_dataset(tmp_path / "b", spec, seed=5)
        for rel in ["manifest.json", "pairs/pair_0000/fixed.fmv", "pairs/pair_0001/gt_field.fmv"]:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_unknown_spec_field_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            synth.DatasetSpec.from_dict({"families": ["cardiac-like"], "shape": [8, 8, 4], "wat": 1})

    def test_missing_split_rejected(self, tmp_path):
        spec = synth.DatasetSpec(families=("cardiac-like",), shape=(16, 16, 8), labels=2,
                                 max_magnitude=2.0, smooth_sigma=4.0, n_train=1, n_val=0, n_test=0)
        synth.write_dataset(tmp_path / "ds", spec, seed=1)
        manifest = synth.load_manifest(tmp_path / "ds")
        with pytest.raises(ValueError, match="split"):
            synth.split_entries(manifest, "test")
