import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kernelflow import _backend, _fallback

from .oracles import brute_sq_edt, naive_trilinear

BACKENDS = _backend.available_backends()


def test_compiled_backend_is_active_when_built():
    if os.environ.get("KERNELFLOW_BACKEND", "").lower() == "python":
        assert _backend.BACKEND == "python"
    elif "cython" in BACKENDS:
        assert _backend.BACKEND == "cython"
    else:
        pytest.skip("compiled extension not built")


@pytest.mark.parametrize("name", sorted(BACKENDS))
@pytest.mark.parametrize("shape", [(1, 1, 1), (1, 1, 9), (3, 1, 5), (7, 6, 5), (16, 20, 12)])
def test_edt_matches_brute_force(name, shape, rng):
    occ = rng.random(shape) < 0.08
    occ.flat[rng.integers(occ.size)] = True
    grid = np.where(occ, 0.0, np.inf)
    BACKENDS[name].squared_edt(grid)
    assert np.array_equal(grid, brute_sq_edt(occ))


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_edt_of_empty_grid_stays_infinite(name):
    grid = np.full((3, 4, 5), np.inf)
    BACKENDS[name].squared_edt(grid)
    assert np.all(np.isinf(grid))


@given(st.tuples(st.integers(1, 9), st.integers(1, 9), st.integers(1, 9)), st.integers(0, 2**32 - 1))
def test_backends_agree_on_edt(shape, seed):
    r = np.random.default_rng(seed)
    occ = r.random(shape) < 0.2
    grids = {}
    for name, mod in BACKENDS.items():
        g = np.where(occ, 0.0, np.inf)
        mod.squared_edt(g)
        grids[name] = g
    ref = grids.pop("python")
    for g in grids.values():
        assert np.array_equal(g, ref)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_trilinear_matches_naive(name, rng):
    grid = rng.random((4, 5, 6))
    coords = rng.uniform(-1.5, 7.5, size=(300, 3))
    val, _ = BACKENDS[name].trilinear(grid, coords)
    want = np.array([naive_trilinear(grid, c) for c in coords])
    assert np.allclose(val, want, atol=1e-13)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_trilinear_gradient_and_clamping(name):
    g = np.zeros((2, 2, 2))
    g[:, :, 1] = 3.0  # value grows along x only
    mod = BACKENDS[name]
    val, grad = mod.trilinear(g, np.array([[0.5, 0.5, 0.5], [-1.0, 0.5, 0.5], [2.0, 0.2, 0.3]]))
    assert np.allclose(val, [1.5, 0.0, 3.0])
    assert np.allclose(grad[0], [3.0, 0.0, 0.0])
    assert np.all(grad[1] == 0.0) and np.all(grad[2] == 0.0)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_trilinear_accepts_read_only_grids(name):
    g = np.arange(8.0).reshape(2, 2, 2)
    g.flags.writeable = False
    val, _ = BACKENDS[name].trilinear(g, np.zeros((1, 3)))
    assert val[0] == 0.0


@given(st.integers(0, 2**32 - 1))
def test_backends_agree_on_trilinear(seed):
    r = np.random.default_rng(seed)
    shape = tuple(r.integers(1, 6, size=3))
    grid = r.random(shape)
    coords = r.uniform(-2, 8, size=(50, 3))
    ref_v, ref_g = _fallback.trilinear(grid, coords)
    for name, mod in BACKENDS.items():
        v, g = mod.trilinear(grid, coords)
        assert np.allclose(v, ref_v, atol=1e-14, rtol=0) and np.allclose(g, ref_g, atol=1e-14, rtol=0)
