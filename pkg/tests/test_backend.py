"""Compiled vs pure kernel agreement and sampling edge cases."""
import numpy as np
import pytest

from foundreg import backend
from foundreg.backend import pure

try:
    from foundreg.backend import _fast
except ImportError:
    _fast = None

needs_fast = pytest.mark.skipif(_fast is None, reason="compiled kernels not built")


@pytest.fixture
def vol(rng):
    return np.ascontiguousarray(rng.random((9, 7, 5), dtype=np.float32))


@pytest.fixture
def coords(rng):
    # includes out-of-range coordinates on purpose
    return np.ascontiguousarray(rng.uniform(-2.0, 10.0, size=(3, 500)))


@needs_fast
class TestBackendParity:
    def test_trilinear_bitwise(self, vol, coords):
        assert np.array_equal(_fast.trilinear_sample(vol, coords), pure.trilinear_sample(vol, coords))

    def test_nearest_bitwise(self, vol, coords, rng):
        assert np.array_equal(_fast.nearest_sample(vol, coords), pure.nearest_sample(vol, coords))
        labels = np.ascontiguousarray(rng.integers(0, 5, vol.shape).astype(np.int32))
        assert np.array_equal(_fast.nearest_sample(labels, coords), pure.nearest_sample(labels, coords))

    def test_jacobian_bitwise(self, rng):
        disp = np.ascontiguousarray(rng.standard_normal((3, 8, 7, 6)).astype(np.float32))
        assert np.array_equal(_fast.jacobian_det(disp), pure.jacobian_det(disp))

    def test_distances_bitwise(self, rng):
        a = np.ascontiguousarray(rng.random((80, 3)) * 20)
        b = np.ascontiguousarray(rng.random((60, 3)) * 20)
        assert np.array_equal(_fast.directed_min_dists(a, b), pure.directed_min_dists(a, b))


class TestSamplingEdges:
    def test_clamp_to_border(self, vol):
        coords = np.array([[-5.0, 100.0], [0.0, 0.0], [0.0, 0.0]])
        out = backend.trilinear_sample(vol, np.ascontiguousarray(coords))
        assert out[0] == vol[0, 0, 0]
        assert out[1] == vol[-1, 0, 0]

    def test_integer_coords_exact(self, vol):
        idx = np.stack(np.meshgrid(*[np.arange(s, dtype=np.float64) for s in vol.shape], indexing="ij"))
        out = backend.trilinear_sample(vol, np.ascontiguousarray(idx.reshape(3, -1)))
        assert np.array_equal(out.reshape(vol.shape), vol)

    def test_nearest_ties_round_up(self, vol):
        coords = np.ascontiguousarray(np.array([[0.5], [0.0], [0.0]]))
        out = backend.nearest_sample(vol, coords)
        assert out[0] == vol[1, 0, 0]

    def test_empty_target_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            backend.directed_min_dists(np.zeros((3, 3)), np.zeros((0, 3)))

    def test_distances_match_cdist(self, rng):
        from scipy.spatial.distance import cdist

        a = np.ascontiguousarray(rng.random((50, 3)) * 10)
        b = np.ascontiguousarray(rng.random((40, 3)) * 10)
        got = backend.directed_min_dists(a, b)
        assert np.allclose(got, cdist(a, b).min(axis=1), atol=1e-12)
