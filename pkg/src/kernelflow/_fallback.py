"""Pure numpy versions of the compiled distance-transform kernels.

Same signatures and results as ``kernelflow._ext._core``. The lower envelope
is vectorised across all grid lines of a pass at once; the per-line control
flow of the scalar algorithm becomes masked updates.
"""

from __future__ import annotations

import numpy as np


def _envelope_lines(f: np.ndarray) -> np.ndarray:
    """Squared 1D distance transform of every row of ``f`` (``inf`` = empty)."""
    nlines, n = f.shape
    rows = np.arange(nlines)
    finite = np.isfinite(f)
    v = np.zeros((nlines, n), dtype=np.intp)
    z = np.full((nlines, n + 1), np.inf)
    k = np.full(nlines, -1, dtype=np.intp)
    for q in range(n):
        active = finite[:, q]
        if not active.any():
            continue
        fresh = active & (k < 0)
        if fresh.any():
            k[fresh] = 0
            v[fresh, 0] = q
            z[fresh, 0] = -np.inf
            z[fresh, 1] = np.inf
        pend = np.flatnonzero(active & ~fresh)
        if pend.size == 0:
            continue
        fq = f[pend, q] + q * q
        s_final = np.empty(pend.size)
        todo = np.arange(pend.size)
        while todo.size:
            lines = pend[todo]
            kk = k[lines]
            vk = v[lines, kk]
            s = (fq[todo] - (f[lines, vk] + vk * vk)) / (2.0 * (q - vk))
            pop = s <= z[lines, kk]
            k[lines[pop]] -= 1
            s_final[todo[~pop]] = s[~pop]
            todo = todo[pop]
        k[pend] += 1
        v[pend, k[pend]] = q
        z[pend, k[pend]] = s_final
        z[pend, k[pend] + 1] = np.inf

    out = np.full((nlines, n), np.inf)
    has = k >= 0
    if not has.any():
        return out
    sel = rows[has]
    kk = np.zeros(sel.size, dtype=np.intp)
    for q in range(n):
        while True:
            adv = z[sel, kk + 1] < q
            if not adv.any():
                break
            kk[adv] += 1
        vk = v[sel, kk]
        out[sel, q] = (q - vk) ** 2 + f[sel, vk]
    return out


def squared_edt(grid: np.ndarray) -> np.ndarray:
    """In-place exact squared Euclidean distance transform, voxel units."""
    if grid.dtype != np.float64 or grid.ndim != 3 or not grid.flags.c_contiguous:
        raise ValueError("grid must be a C-contiguous 3D float64 array")
    for axis in (2, 1, 0):
        moved = np.moveaxis(grid, axis, -1)
        shape = moved.shape
        lines = np.ascontiguousarray(moved).reshape(-1, shape[-1])
        moved[...] = _envelope_lines(lines).reshape(shape)
    return grid


def trilinear(grid: np.ndarray, coords: np.ndarray):
    """Clamped trilinear samples and their gradient in voxel units."""
    coords = np.asarray(coords, dtype=np.float64)
    dims = np.array(grid.shape[::-1])  # (gx, gy, gz)
    hi = dims - 1
    live = (coords >= 0) & (coords <= hi) & (dims > 1)
    c = np.clip(coords, 0, hi)
    i0 = np.minimum(np.floor(c).astype(np.intp), np.maximum(dims - 2, 0))
    i1 = np.minimum(i0 + 1, hi)
    t = np.where(dims > 1, c - i0, 0.0)
    x0, y0, z0 = i0.T
    x1, y1, z1 = i1.T
    tx, ty, tz = t.T
    c000 = grid[z0, y0, x0]
    c100 = grid[z0, y0, x1]
    c010 = grid[z0, y1, x0]
    c110 = grid[z0, y1, x1]
    c001 = grid[z1, y0, x0]
    c101 = grid[z1, y0, x1]
    c011 = grid[z1, y1, x0]
    c111 = grid[z1, y1, x1]
    c00 = c000 + tx * (c100 - c000)
    c10 = c010 + tx * (c110 - c010)
    c01 = c001 + tx * (c101 - c001)
    c11 = c011 + tx * (c111 - c011)
    c0 = c00 + ty * (c10 - c00)
    c1 = c01 + ty * (c11 - c01)
    val = c0 + tz * (c1 - c0)
    grad = np.empty_like(coords)
    grad[:, 0] = ((1 - ty) * (1 - tz) * (c100 - c000) + ty * (1 - tz) * (c110 - c010)
                  + (1 - ty) * tz * (c101 - c001) + ty * tz * (c111 - c011))
    grad[:, 1] = (1 - tz) * (c10 - c00) + tz * (c11 - c01)
    grad[:, 2] = c1 - c0
    grad[~live] = 0.0
    return val, grad
