import numpy as np
import pytest
import torch

torch.set_num_threads(2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def smooth_field(shape, max_magnitude, sigma, seed):
    from foundreg.synth import gen_smooth_field

    return gen_smooth_field(shape, max_magnitude, sigma, seed)


def smooth_volume(shape, sigma, seed):
    """Gaussian-smoothed noise volume, rescaled to [0, 1]."""
    from scipy import ndimage

    rng = np.random.default_rng(seed)
    data = ndimage.gaussian_filter(rng.standard_normal(shape), sigma)
    lo, hi = data.min(), data.max()
    from foundreg.types import Volume

    return Volume(((data - lo) / (hi - lo)).astype(np.float32))
