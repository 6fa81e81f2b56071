"""Quality metrics against independent voxel-counting / distance oracles."""
import numpy as np
import pytest
from scipy.spatial.distance import cdist

from foundreg import fields, metrics
from foundreg.types import DeformationField, Segmentation

from conftest import smooth_field


def seg(labels, label_set, spacing=(1.0, 1.0, 1.0)):
    return Segmentation(np.asarray(labels, np.int32), label_set, spacing)


class TestDiceScore:
    def test_identical(self, rng):
        labels = rng.integers(0, 4, (10, 10, 10)).astype(np.int32)
        s = seg(labels, (1, 2, 3))
        per, mean = metrics.dice_score(s, s)
        assert per == {1: 100.0, 2: 100.0, 3: 100.0}
        assert mean == 100.0

    def test_disjoint_same_size(self):
        a = np.zeros((8, 8, 8), np.int32)
        b = np.zeros((8, 8, 8), np.int32)
        a[:2], b[4:6] = 1, 1
        per, mean = metrics.dice_score(seg(a, (1,)), seg(b, (1,)))
        assert per[1] == 0.0 and mean == 0.0

    def test_half_overlap_cubes(self):
        a = np.zeros((12, 12, 12), np.int32)
        b = np.zeros((12, 12, 12), np.int32)
        a[2:6, 2:6, 2:6] = 1  # 64 voxels
        b[4:8, 2:6, 2:6] = 1  # 64 voxels, overlap 32
        assert metrics.dice_score(seg(a, (1,)), seg(b, (1,)))[1] == 50.0

    def test_absent_label_conventions(self):
        a = np.zeros((4, 4, 4), np.int32)
        b = np.zeros((4, 4, 4), np.int32)
        a[0, 0, 0] = 1
        per, _ = metrics.dice_score(seg(a, (1, 2)), seg(b, (1, 2)))
        assert per[1] == 0.0  # present in exactly one
        assert per[2] == 100.0  # absent from both

    def test_symmetry(self, rng):
        la = rng.integers(0, 3, (8, 8, 8)).astype(np.int32)
        lb = rng.integers(0, 3, (8, 8, 8)).astype(np.int32)
        a, b = seg(la, (1, 2)), seg(lb, (1, 2))
        assert metrics.dice_score(a, b) == metrics.dice_score(b, a)


class TestHd95:
    def test_identical_masks(self):
        a = np.zeros((10, 10, 10), np.int32)
        a[3:7, 3:7, 3:7] = 1
        assert metrics.hd95(seg(a, (1,)), seg(a, (1,)), 1) == 0.0

    def test_three_voxel_shift(self):
        a = np.zeros((20, 20, 20), np.int32)
        b = np.zeros((20, 20, 20), np.int32)
        a[8:12, 8:12, 8:12] = 1
        b[11:15, 8:12, 8:12] = 1
        assert metrics.hd95(seg(a, (1,)), seg(b, (1,)), 1) == pytest.approx(3.0)

    def test_spacing_scales_distance(self):
        a = np.zeros((20, 20, 20), np.int32)
        b = np.zeros((20, 20, 20), np.int32)
        a[8:12, 8:12, 8:12] = 1
        b[11:15, 8:12, 8:12] = 1
        val = metrics.hd95(seg(a, (1,), (1.8, 1.0, 1.0)), seg(b, (1,), (1.8, 1.0, 1.0)), 1)
        assert val == pytest.approx(3 * 1.8)

    def test_empty_label_rejected(self):
        a = np.zeros((6, 6, 6), np.int32)
        a[2:4] = 1
        with pytest.raises(ValueError, match="empty label"):
            metrics.hd95(seg(a, (1,)), seg(np.zeros((6, 6, 6), np.int32), (1,)), 1)

    def test_matches_cdist_oracle(self, rng):
        # independent all-pairs oracle with interpolated percentiles
        a = (rng.random((14, 12, 10)) > 0.6).astype(np.int32)
        b = (rng.random((14, 12, 10)) > 0.6).astype(np.int32)
        sa, sb = seg(a, (1,)), seg(b, (1,))
        got = metrics.hd95(sa, sb, 1)
        pa = metrics._boundary_points(a == 1)
        pb = metrics._boundary_points(b == 1)
        d = cdist(pa, pb)
        expected = max(
            np.percentile(d.min(axis=1), 95.0, method="linear"),
            np.percentile(d.min(axis=0), 95.0, method="linear"),
        )
        assert got == pytest.approx(expected, rel=1e-12)

    def test_symmetric(self, rng):
        a = (rng.random((10, 10, 8)) > 0.5).astype(np.int32)
        b = (rng.random((10, 10, 8)) > 0.5).astype(np.int32)
        sa, sb = seg(a, (1,)), seg(b, (1,))
        assert metrics.hd95(sa, sb, 1) == metrics.hd95(sb, sa, 1)


class TestSdlogj:
    def test_identity_exact_zero(self):
        assert metrics.sdlogj(fields.identity_field((8, 8, 8))) == 0.0

    def test_uniform_scaling_exact_zero(self):
        # alpha = 0.125 keeps every forward difference bitwise constant
        shape = (10, 10, 10)
        grids = np.meshgrid(*[np.arange(s, dtype=np.float32) for s in shape], indexing="ij")
        u = np.stack([0.125 * g for g in grids]).astype(np.float32)
        assert metrics.sdlogj(DeformationField(u)) == 0.0

    def test_uniform_scaling_non_representable_slope(self):
        shape = (10, 10, 10)
        grids = np.meshgrid(*[np.arange(s, dtype=np.float32) for s in shape], indexing="ij")
        u = np.stack([0.1 * g for g in grids]).astype(np.float32)
        assert metrics.sdlogj(DeformationField(u)) <= 1e-6  # float32 rounding only

    def test_matches_independent_oracle(self):
        f = smooth_field((12, 12, 8), 2.0, 3.0, seed=5)
        got = metrics.sdlogj(f)
        det = fields.jacobian_det(f).data.astype(np.float64)
        expected = float(np.std(np.log(np.maximum(det, 1e-6))))
        assert got == pytest.approx(expected, abs=1e-5)

    def test_translation_invariant(self):
        f = smooth_field((10, 10, 8), 1.5, 3.0, seed=6)
        shifted = DeformationField(f.disp + np.array([2, -1, 3], np.float32)[:, None, None, None])
        assert metrics.sdlogj(f) == pytest.approx(metrics.sdlogj(shifted), abs=1e-6)

    def test_folding_clamped(self):
        # det <= 0 somewhere: the floor keeps the log finite
        u = np.zeros((3, 6, 6, 6), np.float32)
        u[0, :, :, :] = -2.0 * np.arange(6, dtype=np.float32)[:, None, None]
        val = metrics.sdlogj(DeformationField(u))
        assert np.isfinite(val)


class TestEndpointError:
    def test_equal_fields(self):
        f = smooth_field((8, 8, 6), 2.0, 2.0, seed=1)
        assert metrics.endpoint_error(f, f) == 0.0

    def test_constant_offset(self):
        shape = (6, 6, 6)
        zero = fields.identity_field(shape)
        const = DeformationField(
            np.broadcast_to(np.array([1, 0, 0], np.float32)[:, None, None, None], (3, *shape)).copy()
        )
        assert metrics.endpoint_error(zero, const) == 1.0

    def test_homogeneity(self):
        shape = (6, 6, 6)
        zero = fields.identity_field(shape)
        g = smooth_field(shape, 1.5, 2.0, seed=9)
        doubled = DeformationField(2.0 * g.disp)
        assert metrics.endpoint_error(zero, doubled) == pytest.approx(2 * metrics.endpoint_error(zero, g), rel=1e-5)

    def test_triangle_inequality(self):
        shape = (8, 8, 6)
        a = smooth_field(shape, 2.0, 2.0, seed=11)
        b = smooth_field(shape, 2.0, 2.0, seed=12)
        c = smooth_field(shape, 2.0, 2.0, seed=13)
        assert metrics.endpoint_error(a, c) <= metrics.endpoint_error(a, b) + metrics.endpoint_error(b, c) + 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            metrics.endpoint_error(fields.identity_field((4, 4, 4)), fields.identity_field((4, 4, 5)))
