"""Channel regularization: stochastic subsets for training, PCA for inference.

Training draws a fresh uniform channel subset per forward pass; inference
replaces it with a deterministic PCA projection to the same channel count,
so the downstream head sees c' channels either way.
"""
from dataclasses import dataclass

import numpy as np
import torch

from .types import FeatureVolume, PcaModel, STAGE_RAW, STAGE_REDUCED


@dataclass(frozen=True)
class ChannelSelection:
    """Sorted distinct channel ids, exactly c' of them, all < c."""

    indices: tuple[int, ...]
    c: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("channel indices must be strictly increasing")
        if idx and (idx[0] < 0 or idx[-1] >= self.c):
            raise ValueError(f"channel indices out of range [0, {self.c})")
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return len(self.indices)


def sample_channel_subset(c: int, c_prime: int, rng_seed: int) -> ChannelSelection:
    """Uniform sample of c' distinct channels from [0, c), deterministic per seed."""
    if not 1 <= c_prime <= c:
        raise ValueError(f"need 1 <= c' <= c, got c'={c_prime}, c={c}")
    rng = np.random.default_rng(rng_seed)
    idx = np.sort(rng.choice(c, size=c_prime, replace=False))
    return ChannelSelection(tuple(int(i) for i in idx), c)


def fit_pca(samples: np.ndarray, c_prime: int) -> PcaModel:
    """Top-c' principal directions of a (N, c) sample matrix.

    Eigenvalue ties break toward the direction whose largest-magnitude
    entry sits at the lower channel index; each direction's largest entry
    is made positive.  Rank deficiency is fine: trailing directions carry
    zero variance but stay orthonormal.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise ValueError(f"samples must be (N, c), got shape {samples.shape}")
    n, c = samples.shape
    if c_prime > c:
        raise ValueError(f"c'={c_prime} exceeds channel count c={c}")
    if n < c_prime:
        raise ValueError(f"need at least c'={c_prime} samples, got {n}")
    mean = samples.mean(axis=0)
    centered = samples - mean
    cov = centered.T @ centered / n
    eigvals, eigvecs = np.linalg.eigh(cov)  # ascending
    eigvals = np.maximum(eigvals, 0.0)
    anchors = np.abs(eigvecs).argmax(axis=0)  # per-direction tie-break key
    order = sorted(range(c), key=lambda i: (-eigvals[i], anchors[i], i))[:c_prime]
    basis = eigvecs[:, order].T.copy()
    for r in range(c_prime):
        j = np.abs(basis[r]).argmax()
        if basis[r, j] < 0:
            basis[r] = -basis[r]
    return PcaModel(mean, basis, eigvals[order])


def apply_pca(fv: FeatureVolume, m: PcaModel) -> FeatureVolume:
    """Project per-voxel channel vectors: v -> basis @ (v - mean)."""
    if fv.stage != STAGE_RAW:
        raise ValueError(f"apply_pca expects stage {STAGE_RAW!r}, got {fv.stage!r}")
    if fv.channels != m.c:
        raise ValueError(f"feature channels {fv.channels} != pca input channels {m.c}")
    centered = fv.data - m.mean[:, None, None, None]
    out = np.tensordot(m.basis, centered, axes=([1], [0]))
    return FeatureVolume(out.astype(np.float32), STAGE_REDUCED)


class SubsetReducer:
    """Torch-side reduction used in the training forward pass."""

    def __init__(self, selection: ChannelSelection):
        self.selection = selection
        self.channels_out = len(selection)
        self._idx = torch.as_tensor(selection.indices, dtype=torch.long)

    def __call__(self, feats: torch.Tensor) -> torch.Tensor:
        # feats (c, h, w, D) -> (c', h, w, D)
        if feats.shape[0] != self.selection.c:
            raise ValueError(f"expected {self.selection.c} channels, got {feats.shape[0]}")
        return feats.index_select(0, self._idx)


class PcaReducer:
    """Torch-side deterministic reduction used at inference."""

    def __init__(self, model: PcaModel):
        self.model = model
        self.channels_out = model.c_prime
        self._mean = torch.from_numpy(np.array(model.mean, dtype=np.float32))
        self._basis = torch.from_numpy(np.array(model.basis, dtype=np.float32))

    def __call__(self, feats: torch.Tensor) -> torch.Tensor:
        if feats.shape[0] != self.model.c:
            raise ValueError(f"expected {self.model.c} channels, got {feats.shape[0]}")
        centered = feats - self._mean.to(feats.dtype).view(-1, 1, 1, 1)
        return torch.einsum("rc,chwd->rhwd", self._basis.to(feats.dtype), centered)


def subsample_voxel_vectors(data: np.ndarray, max_samples: int, seed: int) -> np.ndarray:
    """Uniform spatial subsample of per-voxel channel vectors from (c, h, w, d)."""
    c = data.shape[0]
    flat = data.reshape(c, -1).T  # (voxels, c)
    n = flat.shape[0]
    if n <= max_samples:
        return flat.copy()
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(n, size=max_samples, replace=False))
    return flat[pick]
