"""Core value types shared across the toolkit.

All arrays follow a single axis convention: scalar volumes are (H, W, D),
multi-channel data is (C, H, W, D) with channels first.  Displacements are
stored in voxel units; physical spacing only enters surface-distance
metrics.  Instances are immutable after construction (the wrapped arrays
are copied and marked read-only), so they can be shared freely across
threads.
"""
from dataclasses import dataclass, field

import numpy as np

# feature pipeline stages, in channel order c -> c' -> n
STAGE_RAW = "raw_c"
STAGE_REDUCED = "reduced_cprime"
STAGE_COMPRESSED = "compressed_n"
FEATURE_STAGES = (STAGE_RAW, STAGE_REDUCED, STAGE_COMPRESSED)


def _freeze(a: np.ndarray, dtype) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=dtype)
    if out is a:
        out = out.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Volume:
    """A 3D scalar intensity image with per-axis voxel spacing in mm."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim != 3 or min(a.shape) < 1:
            raise ValueError(f"volume must be 3D with all dims >= 1, got shape {a.shape}")
        a = _freeze(a, np.float32)
        if not np.isfinite(a).all():
            raise ValueError("volume contains non-finite voxels")
        sp = tuple(float(s) for s in self.spacing)
        if len(sp) != 3 or any(s <= 0 for s in sp):
            raise ValueError(f"spacing must be 3 positive values, got {self.spacing}")
        object.__setattr__(self, "data", a)
        object.__setattr__(self, "spacing", sp)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class Segmentation:
    """Integer label volume; label_set lists the foreground ids present by contract."""

    labels: np.ndarray
    label_set: tuple[int, ...]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        a = np.asarray(self.labels)
        if a.ndim != 3 or min(a.shape) < 1:
            raise ValueError(f"segmentation must be 3D with all dims >= 1, got shape {a.shape}")
        a = _freeze(a, np.int32)
        ls = tuple(sorted(int(l) for l in self.label_set))
        if any(l <= 0 for l in ls) or len(set(ls)) != len(ls):
            raise ValueError(f"label_set must be distinct positive ids, got {self.label_set}")
        allowed = {0, *ls}
        present = set(np.unique(a).tolist())
        if not present <= allowed:
            raise ValueError(f"segmentation contains labels outside {{0}} | label_set: {sorted(present - allowed)}")
        sp = tuple(float(s) for s in self.spacing)
        if len(sp) != 3 or any(s <= 0 for s in sp):
            raise ValueError(f"spacing must be 3 positive values, got {self.spacing}")
        object.__setattr__(self, "labels", a)
        object.__setattr__(self, "label_set", ls)
        object.__setattr__(self, "spacing", sp)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class DeformationField:
    """Per-voxel displacement u, shape (3, H, W, D), voxel units.

    The transform is phi(x) = x + u(x): channel k displaces along axis k.
    """

    disp: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.disp)
        if a.ndim != 4 or a.shape[0] != 3 or min(a.shape[1:]) < 1:
            raise ValueError(f"field must have shape (3, H, W, D), got {a.shape}")
        a = _freeze(a, np.float32)
        if not np.isfinite(a).all():
            raise ValueError("field contains non-finite displacements")
        object.__setattr__(self, "disp", a)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.disp.shape[1:]


@dataclass(frozen=True)
class FeatureVolume:
    """Multi-channel 3D feature map (C, H, W, D) tagged with its pipeline stage."""

    data: np.ndarray
    stage: str

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim != 4 or min(a.shape) < 1:
            raise ValueError(f"features must have shape (C, H, W, D), got {a.shape}")
        if self.stage not in FEATURE_STAGES:
            raise ValueError(f"unknown feature stage {self.stage!r}, expected one of {FEATURE_STAGES}")
        a = _freeze(a, np.float32)
        if not np.isfinite(a).all():
            raise ValueError("features contain non-finite values")
        object.__setattr__(self, "data", a)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape[1:]


@dataclass(frozen=True)
class PcaModel:
    """Mean + orthonormal projection basis for deterministic channel reduction.

    basis rows are principal directions (c' x c); projection of a channel
    vector v is basis @ (v - mean).  Sign convention: the largest-magnitude
    entry of each row is positive.
    """

    mean: np.ndarray
    basis: np.ndarray
    explained_variance: np.ndarray = field(default=None)

    def __post_init__(self):
        mean = _freeze(np.asarray(self.mean), np.float32)
        basis = _freeze(np.asarray(self.basis), np.float32)
        if mean.ndim != 1 or basis.ndim != 2 or basis.shape[1] != mean.shape[0]:
            raise ValueError(f"inconsistent pca shapes: mean {mean.shape}, basis {basis.shape}")
        if basis.shape[0] > basis.shape[1]:
            raise ValueError("pca basis cannot have more rows than input channels")
        gram = basis.astype(np.float64) @ basis.astype(np.float64).T
        if np.abs(gram - np.eye(basis.shape[0])).max() > 1e-5:
            raise ValueError("pca basis rows are not orthonormal within 1e-5")
        if self.explained_variance is not None:
            ev = _freeze(np.asarray(self.explained_variance), np.float32)
            if ev.shape != (basis.shape[0],):
                raise ValueError(f"explained_variance must have shape ({basis.shape[0]},), got {ev.shape}")
            if np.any(ev < -1e-7) or np.any(np.diff(ev) > 1e-7):
                raise ValueError("explained_variance must be non-negative and non-increasing")
            object.__setattr__(self, "explained_variance", ev)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "basis", basis)

    @property
    def c(self) -> int:
        return self.mean.shape[0]

    @property
    def c_prime(self) -> int:
        return self.basis.shape[0]
