"""Deformation-field algebra: warping, composition, resampling, Jacobian.

Conventions (fixed everywhere):
  * warp_volume(v, f)(x) = v(x + u(x)); out-of-range sample coordinates are
    clamped to the border.
  * compose_fields(outer, inner) realizes phi_outer o phi_inner:
    u(x) = u_inner(x) + u_outer sampled trilinearly at x + u_inner(x).
  * resample_field rescales displacement channel k by new_dim_k / old_dim_k
    so voxel-unit displacements stay geometrically consistent.
  * Resampling maps output index j to source coordinate
    j * (old - 1) / (new - 1) (align-corners; 0 when new == 1).
"""
import numpy as np

from . import backend
from .types import DeformationField, Segmentation, Volume

INTERP_MODES = ("trilinear", "nearest")


def _check_shape(shape) -> tuple[int, int, int]:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3 or any(s < 1 for s in shape):
        raise ValueError(f"shape must be 3 positive dims, got {shape}")
    return shape


def identity_field(shape) -> DeformationField:
    """Zero displacement everywhere: phi(x) = x."""
    h, w, d = _check_shape(shape)
    return DeformationField(np.zeros((3, h, w, d), dtype=np.float32))


def _base_coords(shape) -> np.ndarray:
    """Voxel-index grid as (3, H*W*D) float64."""
    grids = np.meshgrid(*(np.arange(s, dtype=np.float64) for s in shape), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=0)


def _warped_coords(f: DeformationField) -> np.ndarray:
    shape = f.shape
    return _base_coords(shape) + f.disp.reshape(3, -1).astype(np.float64)


def warp_volume(v: Volume, f: DeformationField, interp: str = "trilinear") -> Volume:
    """Resample v at x + u(x); output(x) = v(x + u(x))."""
    if v.shape != f.shape:
        raise ValueError(f"volume shape {v.shape} != field shape {f.shape}")
    if interp not in INTERP_MODES:
        raise ValueError(f"unknown interpolation mode {interp!r}, expected one of {INTERP_MODES}")
    coords = np.ascontiguousarray(_warped_coords(f))
    if interp == "trilinear":
        out = backend.trilinear_sample(v.data, coords)
    else:
        out = backend.nearest_sample(v.data, coords)
    return Volume(out.reshape(v.shape), v.spacing)


def warp_segmentation(s: Segmentation, f: DeformationField) -> Segmentation:
    """Nearest-neighbor label warping; emits only values from {0} | label_set."""
    if s.shape != f.shape:
        raise ValueError(f"segmentation shape {s.shape} != field shape {f.shape}")
    coords = np.ascontiguousarray(_warped_coords(f))
    out = backend.nearest_sample(s.labels, coords)
    return Segmentation(out.reshape(s.shape), s.label_set, s.spacing)


def warp_channels(data: np.ndarray, f: DeformationField) -> np.ndarray:
    """Trilinear-warp every channel of a (C, H, W, D) array by the same field."""
    if data.shape[1:] != f.shape:
        raise ValueError(f"channel grid {data.shape[1:]} != field shape {f.shape}")
    coords = np.ascontiguousarray(_warped_coords(f))
    out = np.empty_like(data, dtype=np.float32)
    for c in range(data.shape[0]):
        chan = np.ascontiguousarray(data[c], dtype=np.float32)
        out[c] = backend.trilinear_sample(chan, coords).reshape(f.shape)
    return out


def compose_fields(outer: DeformationField, inner: DeformationField) -> DeformationField:
    """phi_total = phi_outer o phi_inner."""
    if outer.shape != inner.shape:
        raise ValueError(f"field shapes differ: outer {outer.shape}, inner {inner.shape}")
    coords = np.ascontiguousarray(_warped_coords(inner))
    total = np.empty_like(inner.disp)
    for k in range(3):
        chan = np.ascontiguousarray(outer.disp[k])
        sampled = backend.trilinear_sample(chan, coords).reshape(inner.shape)
        total[k] = inner.disp[k] + sampled
    return DeformationField(total)


def _resample_axis_coords(new_dim: int, old_dim: int) -> np.ndarray:
    if new_dim == 1:
        return np.zeros(1, dtype=np.float64)
    return np.arange(new_dim, dtype=np.float64) * ((old_dim - 1) / (new_dim - 1))


def resample_grid_coords(old_shape, new_shape) -> np.ndarray:
    """Source coordinates (3, H'*W'*D') for align-corners resampling."""
    axes = [_resample_axis_coords(n, o) for n, o in zip(new_shape, old_shape)]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.ascontiguousarray(np.stack([g.ravel() for g in grids], axis=0))


def resample_channels(data: np.ndarray, new_shape) -> np.ndarray:
    """Trilinear per-channel resampling of a (C, H, W, D) array (no magnitude scaling)."""
    new_shape = _check_shape(new_shape)
    coords = resample_grid_coords(data.shape[1:], new_shape)
    out = np.empty((data.shape[0],) + new_shape, dtype=np.float32)
    for c in range(data.shape[0]):
        chan = np.ascontiguousarray(data[c], dtype=np.float32)
        out[c] = backend.trilinear_sample(chan, coords).reshape(new_shape)
    return out


def resample_field(f: DeformationField, new_shape) -> DeformationField:
    """Trilinear field resampling with per-channel displacement rescaling."""
    new_shape = _check_shape(new_shape)
    out = resample_channels(f.disp, new_shape)
    for k in range(3):
        out[k] *= np.float32(new_shape[k] / f.shape[k])
    return DeformationField(out)


def jacobian_det(f: DeformationField) -> Volume:
    """Per-voxel det(I + grad u); forward differences, backward at the far boundary."""
    if min(f.shape) < 2:
        raise ValueError(f"jacobian needs >= 2 voxels per axis, got {f.shape}")
    det = backend.jacobian_det(np.ascontiguousarray(f.disp))
    return Volume(det)
