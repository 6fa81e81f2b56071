# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled interpolation / Jacobian / surface-distance kernels.

Mirrors backend.pure exactly: float64 internal arithmetic in the same
expression order, clamp-to-border sampling, nearest ties rounding up.
"""
import numpy as np

cimport cython
cimport numpy as cnp
from libc.math cimport floor, sqrt

cnp.import_array()

name = "fast"

ctypedef fused sample_t:
    cnp.float32_t
    cnp.int32_t


cdef inline double _clamp(double v, double lo, double hi) nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


def trilinear_sample(const cnp.float32_t[:, :, ::1] vol, const cnp.float64_t[:, ::1] coords):
    """Sample vol (H,W,D) at coords (3,N); returns (N,) float32."""
    cdef Py_ssize_t h = vol.shape[0], w = vol.shape[1], d = vol.shape[2]
    cdef Py_ssize_t n = coords.shape[1], i
    cdef double x, y, z, fx, fy, fz, out
    cdef Py_ssize_t x0, y0, z0, x1, y1, z1
    result = np.empty(n, dtype=np.float32)
    cdef cnp.float32_t[::1] res = result
    with nogil:
        for i in range(n):
            x = _clamp(coords[0, i], 0.0, h - 1.0)
            y = _clamp(coords[1, i], 0.0, w - 1.0)
            z = _clamp(coords[2, i], 0.0, d - 1.0)
            x0 = <Py_ssize_t>floor(x); y0 = <Py_ssize_t>floor(y); z0 = <Py_ssize_t>floor(z)
            fx = x - x0; fy = y - y0; fz = z - z0
            x1 = x0 + 1 if x0 + 1 < h else h - 1
            y1 = y0 + 1 if y0 + 1 < w else w - 1
            z1 = z0 + 1 if z0 + 1 < d else d - 1
            out = (
                (<double>vol[x0, y0, z0]) * (1.0 - fx) * (1.0 - fy) * (1.0 - fz)
                + (<double>vol[x1, y0, z0]) * fx * (1.0 - fy) * (1.0 - fz)
                + (<double>vol[x0, y1, z0]) * (1.0 - fx) * fy * (1.0 - fz)
                + (<double>vol[x0, y0, z1]) * (1.0 - fx) * (1.0 - fy) * fz
                + (<double>vol[x1, y1, z0]) * fx * fy * (1.0 - fz)
                + (<double>vol[x1, y0, z1]) * fx * (1.0 - fy) * fz
                + (<double>vol[x0, y1, z1]) * (1.0 - fx) * fy * fz
                + (<double>vol[x1, y1, z1]) * fx * fy * fz
            )
            res[i] = <cnp.float32_t>out
    return result


def nearest_sample(const sample_t[:, :, ::1] vol, const cnp.float64_t[:, ::1] coords):
    """Nearest-neighbor sampling; preserves the input dtype."""
    cdef Py_ssize_t h = vol.shape[0], w = vol.shape[1], d = vol.shape[2]
    cdef Py_ssize_t n = coords.shape[1], i, ix, iy, iz
    if sample_t is cnp.float32_t:
        result = np.empty(n, dtype=np.float32)
    else:
        result = np.empty(n, dtype=np.int32)
    cdef sample_t[::1] res = result
    with nogil:
        for i in range(n):
            ix = <Py_ssize_t>floor(_clamp(coords[0, i], 0.0, h - 1.0) + 0.5)
            iy = <Py_ssize_t>floor(_clamp(coords[1, i], 0.0, w - 1.0) + 0.5)
            iz = <Py_ssize_t>floor(_clamp(coords[2, i], 0.0, d - 1.0) + 0.5)
            res[i] = vol[ix, iy, iz]
    return result


cdef inline double _grad(const cnp.float32_t[:, :, :, ::1] u, Py_ssize_t c, int axis,
                         Py_ssize_t i, Py_ssize_t j, Py_ssize_t k,
                         Py_ssize_t h, Py_ssize_t w, Py_ssize_t d) nogil:
    # forward difference, backward at the far boundary
    if axis == 0:
        if i + 1 < h:
            return <double>u[c, i + 1, j, k] - <double>u[c, i, j, k]
        return <double>u[c, i, j, k] - <double>u[c, i - 1, j, k]
    elif axis == 1:
        if j + 1 < w:
            return <double>u[c, i, j + 1, k] - <double>u[c, i, j, k]
        return <double>u[c, i, j, k] - <double>u[c, i, j - 1, k]
    else:
        if k + 1 < d:
            return <double>u[c, i, j, k + 1] - <double>u[c, i, j, k]
        return <double>u[c, i, j, k] - <double>u[c, i, j, k - 1]


def jacobian_det(const cnp.float32_t[:, :, :, ::1] disp):
    """Determinant of (I + grad u) per voxel for disp (3,H,W,D)."""
    cdef Py_ssize_t h = disp.shape[1], w = disp.shape[2], d = disp.shape[3]
    cdef Py_ssize_t i, j, k
    cdef double j00, j01, j02, j10, j11, j12, j20, j21, j22
    result = np.empty((h, w, d), dtype=np.float32)
    cdef cnp.float32_t[:, :, ::1] res = result
    with nogil:
        for i in range(h):
            for j in range(w):
                for k in range(d):
                    j00 = 1.0 + _grad(disp, 0, 0, i, j, k, h, w, d)
                    j01 = _grad(disp, 0, 1, i, j, k, h, w, d)
                    j02 = _grad(disp, 0, 2, i, j, k, h, w, d)
                    j10 = _grad(disp, 1, 0, i, j, k, h, w, d)
                    j11 = 1.0 + _grad(disp, 1, 1, i, j, k, h, w, d)
                    j12 = _grad(disp, 1, 2, i, j, k, h, w, d)
                    j20 = _grad(disp, 2, 0, i, j, k, h, w, d)
                    j21 = _grad(disp, 2, 1, i, j, k, h, w, d)
                    j22 = 1.0 + _grad(disp, 2, 2, i, j, k, h, w, d)
                    res[i, j, k] = <cnp.float32_t>(
                        j00 * (j11 * j22 - j12 * j21)
                        - j01 * (j10 * j22 - j12 * j20)
                        + j02 * (j10 * j21 - j11 * j20)
                    )
    return result


def directed_min_dists(const cnp.float64_t[:, ::1] a, const cnp.float64_t[:, ::1] b, block=None):
    """For each point in a (N,3), the distance to its nearest point in b (M,3)."""
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], i, j
    cdef double best, dx, dy, dz, d2
    if m == 0:
        raise ValueError("empty target point set")
    result = np.empty(n, dtype=np.float64)
    cdef cnp.float64_t[::1] res = result
    with nogil:
        for i in range(n):
            best = 1e300
            for j in range(m):
                dx = a[i, 0] - b[j, 0]
                dy = a[i, 1] - b[j, 1]
                dz = a[i, 2] - b[j, 2]
                d2 = dx * dx + dy * dy + dz * dz
                if d2 < best:
                    best = d2
            res[i] = sqrt(best)
    return result
