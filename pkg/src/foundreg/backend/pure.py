"""Pure-numpy kernels: the always-available fallback for the compiled core.

Both backends compute in float64 internally with the same expression
order, so results agree bit-for-bit.  Sampling coordinates are clamped to
the volume border before interpolation.
"""
import numpy as np

name = "pure"


def trilinear_sample(vol: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Sample vol (H,W,D) float32 at coords (3,N) float64; returns (N,) float32."""
    h, w, d = vol.shape
    x = np.clip(coords[0], 0.0, h - 1.0)
    y = np.clip(coords[1], 0.0, w - 1.0)
    z = np.clip(coords[2], 0.0, d - 1.0)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    z0 = np.floor(z).astype(np.intp)
    fx = x - x0
    fy = y - y0
    fz = z - z0
    x1 = np.minimum(x0 + 1, h - 1)
    y1 = np.minimum(y0 + 1, w - 1)
    z1 = np.minimum(z0 + 1, d - 1)
    v = vol.astype(np.float64, copy=False)
    out = (
        v[x0, y0, z0] * (1.0 - fx) * (1.0 - fy) * (1.0 - fz)
        + v[x1, y0, z0] * fx * (1.0 - fy) * (1.0 - fz)
        + v[x0, y1, z0] * (1.0 - fx) * fy * (1.0 - fz)
        + v[x0, y0, z1] * (1.0 - fx) * (1.0 - fy) * fz
        + v[x1, y1, z0] * fx * fy * (1.0 - fz)
        + v[x1, y0, z1] * fx * (1.0 - fy) * fz
        + v[x0, y1, z1] * (1.0 - fx) * fy * fz
        + v[x1, y1, z1] * fx * fy * fz
    )
    return out.astype(np.float32)


def _nearest_indices(shape, coords):
    idx = []
    for axis in range(3):
        c = np.clip(coords[axis], 0.0, shape[axis] - 1.0)
        # ties round up: floor(c + 0.5)
        idx.append(np.floor(c + 0.5).astype(np.intp))
    return tuple(idx)


def nearest_sample(vol: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Nearest-neighbor sampling; preserves the input dtype (float32 or int32)."""
    ix, iy, iz = _nearest_indices(vol.shape, coords)
    return vol[ix, iy, iz].copy()


def jacobian_det(disp: np.ndarray) -> np.ndarray:
    """Determinant of (I + grad u) per voxel for disp (3,H,W,D) float32.

    Forward differences in the interior, backward differences on the far
    boundary of each axis.
    """
    u = disp.astype(np.float64, copy=False)
    g = np.empty((3, 3) + u.shape[1:], dtype=np.float64)
    for c in range(3):
        for axis in range(3):
            grad = np.empty(u.shape[1:], dtype=np.float64)
            fwd = np.diff(u[c], axis=axis)
            sl_main = [slice(None)] * 3
            sl_main[axis] = slice(0, u.shape[1 + axis] - 1)
            grad[tuple(sl_main)] = fwd
            sl_last = [slice(None)] * 3
            sl_last[axis] = u.shape[1 + axis] - 1
            sl_prev = [slice(None)] * 3
            sl_prev[axis] = slice(u.shape[1 + axis] - 2, u.shape[1 + axis] - 1)
            grad[tuple(sl_last)] = fwd[tuple(sl_prev)].reshape(grad[tuple(sl_last)].shape)
            g[c, axis] = grad
    j00 = 1.0 + g[0, 0]
    j11 = 1.0 + g[1, 1]
    j22 = 1.0 + g[2, 2]
    j01, j02 = g[0, 1], g[0, 2]
    j10, j12 = g[1, 0], g[1, 2]
    j20, j21 = g[2, 0], g[2, 1]
    det = (
        j00 * (j11 * j22 - j12 * j21)
        - j01 * (j10 * j22 - j12 * j20)
        + j02 * (j10 * j21 - j11 * j20)
    )
    return det.astype(np.float32)


def directed_min_dists(a: np.ndarray, b: np.ndarray, block: int = 1024) -> np.ndarray:
    """For each point in a (N,3) float64, the distance to its nearest point in b (M,3)."""
    if len(b) == 0:
        raise ValueError("empty target point set")
    out = np.empty(len(a), dtype=np.float64)
    for start in range(0, len(a), block):
        chunk = a[start : start + block]
        d2 = ((chunk[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        out[start : start + block] = np.sqrt(d2.min(axis=1))
    return out
