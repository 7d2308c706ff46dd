"""Independent reference implementations used by the tests."""

import numpy as np


def brute_chamfer(p, t, bidirectional=False):
    d2 = ((p[:, None, :] - t[None, :, :]) ** 2).sum(-1)
    nn = d2.argmin(axis=1)  # argmin takes the first (lowest) index on ties
    value = d2[np.arange(len(p)), nn].mean()
    grad = 2.0 * (p - t[nn]) / len(p)
    if bidirectional:
        nb = d2.argmin(axis=0)
        value += d2[nb, np.arange(len(t))].mean()
        for j, i in enumerate(nb):
            grad[i] += 2.0 * (p[i] - t[j]) / len(t)
    return value, grad


def brute_sq_edt(occ):
    """Squared voxel distance to the nearest occupied voxel, exhaustively."""
    occupied = np.argwhere(occ)
    coords = np.indices(occ.shape).reshape(3, -1).T
    out = np.full(len(coords), np.inf)
    for chunk in np.array_split(np.arange(len(coords)), max(1, len(coords) // 20000)):
        d = ((coords[chunk, None, :] - occupied[None, :, :]) ** 2).sum(-1)
        out[chunk] = d.min(axis=1)
    return out.reshape(occ.shape)


def naive_trilinear(grid, c):
    """Clamped trilinear value for one (x, y, z) voxel coordinate."""
    gz, gy, gx = grid.shape
    c = np.clip(c, 0, [gx - 1, gy - 1, gz - 1])
    lo = np.minimum(np.floor(c).astype(int), [gx - 1, gy - 1, gz - 1])
    hi = np.minimum(lo + 1, [gx - 1, gy - 1, gz - 1])
    t = c - lo
    v = 0.0
    for dz in (0, 1):
        for dy in (0, 1):
            for dx in (0, 1):
                w = ((t[0] if dx else 1 - t[0]) * (t[1] if dy else 1 - t[1]) * (t[2] if dz else 1 - t[2]))
                ix = hi[0] if dx else lo[0]
                iy = hi[1] if dy else lo[1]
                iz = hi[2] if dz else lo[2]
                v += w * grid[iz, iy, ix]
    return v


def central_difference(fn, x, h):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (fn(xp) - fn(xm)) / (2 * h)
    return g
