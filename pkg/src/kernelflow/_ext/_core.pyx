# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the distance-transform path.

Grids are ``(gz, gy, gx)`` C-ordered float64 arrays (x fastest). The squared
EDT treats entries ``>= inf`` as empty.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, INFINITY

cnp.import_array()


cdef void _envelope_1d(double* f, Py_ssize_t stride, Py_ssize_t n,
                       double* g, Py_ssize_t* v, double* z) noexcept nogil:
    # lower envelope of parabolas (q - v)^2 + f[v] over finite samples only
    cdef Py_ssize_t q, k = -1, vk
    cdef double s, fq
    for q in range(n):
        fq = f[q * stride]
        if fq == INFINITY:
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -INFINITY
            z[1] = INFINITY
            continue
        while True:
            vk = v[k]
            s = ((fq + q * q) - (f[vk * stride] + vk * vk)) / (2.0 * (q - vk))
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = INFINITY
    if k < 0:
        for q in range(n):
            g[q] = INFINITY
        return
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        vk = v[k]
        g[q] = (q - vk) * (q - vk) + f[vk * stride]


def squared_edt(cnp.ndarray[cnp.float64_t, ndim=3] grid not None):
    """In-place exact squared Euclidean distance transform, voxel units."""
    if not grid.flags.c_contiguous:
        raise ValueError("grid must be C-contiguous")
    cdef double[:, :, ::1] f = grid
    cdef Py_ssize_t gz = f.shape[0], gy = f.shape[1], gx = f.shape[2]
    cdef Py_ssize_t n = max(gx, max(gy, gz))
    cdef double[::1] g = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t[::1] v = np.empty(n, dtype=np.intp)
    cdef double[::1] z = np.empty(n + 1, dtype=np.float64)
    cdef Py_ssize_t i, j, q
    cdef double* base
    with nogil:
        # x pass
        for i in range(gz):
            for j in range(gy):
                base = &f[i, j, 0]
                _envelope_1d(base, 1, gx, &g[0], &v[0], &z[0])
                for q in range(gx):
                    base[q] = g[q]
        # y pass
        for i in range(gz):
            for j in range(gx):
                base = &f[i, 0, j]
                _envelope_1d(base, gx, gy, &g[0], &v[0], &z[0])
                for q in range(gy):
                    base[q * gx] = g[q]
        # z pass
        for i in range(gy):
            for j in range(gx):
                base = &f[0, i, j]
                _envelope_1d(base, gx * gy, gz, &g[0], &v[0], &z[0])
                for q in range(gz):
                    base[q * gx * gy] = g[q]
    return grid


def trilinear(grid, coords):
    """Clamped trilinear samples and their gradient in voxel units.

    ``coords`` holds continuous voxel-centre coordinates ``(x, y, z)``.
    Gradient components along clamped axes are zero.
    """
    cdef const double[:, :, ::1] f = np.ascontiguousarray(grid, dtype=np.float64)
    cdef const double[:, ::1] u = np.ascontiguousarray(coords, dtype=np.float64)
    cdef Py_ssize_t npts = u.shape[0]
    cdef Py_ssize_t dims[3]
    dims[0] = f.shape[2]
    dims[1] = f.shape[1]
    dims[2] = f.shape[0]
    out_v = np.empty(npts, dtype=np.float64)
    out_g = np.zeros((npts, 3), dtype=np.float64)
    cdef double[::1] val = out_v
    cdef double[:, ::1] grad = out_g
    cdef Py_ssize_t p, a
    cdef Py_ssize_t i0[3]
    cdef Py_ssize_t i1[3]
    cdef double t[3]
    cdef bint live[3]
    cdef double c, hi
    cdef double c000, c100, c010, c110, c001, c101, c011, c111
    cdef double c00, c10, c01, c11, c0, c1
    cdef double tx, ty, tz
    with nogil:
        for p in range(npts):
            for a in range(3):
                c = u[p, a]
                hi = dims[a] - 1
                live[a] = True
                if dims[a] == 1:
                    i0[a] = 0
                    i1[a] = 0
                    t[a] = 0.0
                    live[a] = False
                    continue
                if c < 0.0:
                    c = 0.0
                    live[a] = False
                elif c > hi:
                    c = hi
                    live[a] = False
                i0[a] = <Py_ssize_t>floor(c)
                if i0[a] > dims[a] - 2:
                    i0[a] = dims[a] - 2
                i1[a] = i0[a] + 1
                t[a] = c - i0[a]
            tx = t[0]
            ty = t[1]
            tz = t[2]
            c000 = f[i0[2], i0[1], i0[0]]
            c100 = f[i0[2], i0[1], i1[0]]
            c010 = f[i0[2], i1[1], i0[0]]
            c110 = f[i0[2], i1[1], i1[0]]
            c001 = f[i1[2], i0[1], i0[0]]
            c101 = f[i1[2], i0[1], i1[0]]
            c011 = f[i1[2], i1[1], i0[0]]
            c111 = f[i1[2], i1[1], i1[0]]
            c00 = c000 + tx * (c100 - c000)
            c10 = c010 + tx * (c110 - c010)
            c01 = c001 + tx * (c101 - c001)
            c11 = c011 + tx * (c111 - c011)
            c0 = c00 + ty * (c10 - c00)
            c1 = c01 + ty * (c11 - c01)
            val[p] = c0 + tz * (c1 - c0)
            if live[0]:
                grad[p, 0] = ((1 - ty) * (1 - tz) * (c100 - c000)
                              + ty * (1 - tz) * (c110 - c010)
                              + (1 - ty) * tz * (c101 - c001)
                              + ty * tz * (c111 - c011))
            if live[1]:
                grad[p, 1] = (1 - tz) * (c10 - c00) + tz * (c11 - c01)
            if live[2]:
                grad[p, 2] = c1 - c0
    return out_v, out_g
