"""Compare the compiled and numpy backends, and DT vs Chamfer iteration cost.

    python3 benchmarks/bench_backends.py [--quick] [--json out.json]

Sections:
  edt        squared EDT on random occupancy grids, per backend
  trilinear  clamped trilinear lookups, per backend
  loss       one optimizer iteration with the DT loss vs the Chamfer loss on a
             50k-point synthetic scene (kernel product included)
"""

from __future__ import annotations

import argparse
import json
import statistics
import time

import numpy as np

from kernelflow import _backend
from kernelflow.pipeline import RunConfig, build_supports, build_term, embed_pair
from kernelflow.kernel import KernelKind, kernel_matrix
from kernelflow.optimize import objective
from kernelflow.synth import SceneSpec, generate


def _best_of(fn, repeats: int) -> dict:
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return {"min_s": min(samples), "mean_s": statistics.fmean(samples)}


def bench_edt(shapes, repeats, backends):
    rng = np.random.default_rng(0)
    rows = []
    for shape in shapes:
        occ = rng.random(shape) < 0.01
        base = np.where(occ, 0.0, np.inf)
        for name, mod in backends.items():
            res = _best_of(lambda: mod.squared_edt(base.copy()), repeats)
            rows.append({"section": "edt", "shape": list(shape), "backend": name, **res})
    return rows


def bench_trilinear(counts, repeats, backends):
    rng = np.random.default_rng(1)
    grid = rng.random((80, 200, 200))
    rows = []
    for n in counts:
        coords = rng.uniform(-2, 202, size=(n, 3))
        for name, mod in backends.items():
            res = _best_of(lambda: mod.trilinear(grid, coords), repeats)
            rows.append({"section": "trilinear", "queries": n, "backend": name, **res})
    return rows


def bench_loss(points, iters, embeddings):
    scene = generate(SceneSpec(background_points=points - 2000, seed=0))
    rows = []
    for emb in embeddings:
        per = {}
        for loss in ("dt", "chamfer", "chamfer-bi"):
            cfg = RunConfig(embedding=emb, loss=loss)
            sup = build_supports(scene.source, scene.target, cfg)
            a, b = embed_pair(scene.source, sup, cfg)
            K = kernel_matrix(a, b, KernelKind(cfg.kernel, cfg.effective_sigma))
            term = build_term(scene.source, scene.target, cfg)
            alpha = np.random.default_rng(2).normal(0, 1e-3, (K.shape[1], 3))
            res = _best_of(lambda: objective(K, alpha, term, 1e-4), iters)
            per[loss] = res["mean_s"]
            rows.append({"section": "loss", "embedding": emb, "loss": loss, "points": len(scene.source),
                         "supports": K.shape[1], "per_iter_s": res["mean_s"]})
        rows.append({"section": "loss-ratio", "embedding": emb,
                     "chamfer_over_dt": per["chamfer"] / per["dt"],
                     "chamfer_bi_over_dt": per["chamfer-bi"] / per["dt"]})
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--quick", action="store_true", help="small sizes, for smoke runs")
    ap.add_argument("--json", help="also write the rows as JSON")
    args = ap.parse_args(argv)
    backends = _backend.available_backends()
    if args.quick:
        rows = (bench_edt([(32, 64, 64)], 2, backends)
                + bench_trilinear([10_000], 2, backends)
                + bench_loss(10_000, 3, ["identity"]))
    else:
        rows = (bench_edt([(40, 128, 128), (80, 440, 440)], 3, backends)
                + bench_trilinear([50_000, 500_000], 5, backends)
                + bench_loss(50_000, 10, ["identity", "rff"]))
    print(f"active backend: {_backend.BACKEND}; available: {', '.join(backends)}")
    for r in rows:
        print("  ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in r.items()))
    for shape_key in ("shape", "queries"):
        keyed = {}
        for r in rows:
            if shape_key in r:
                keyed.setdefault(str(r[shape_key]), {})[r["backend"]] = r["min_s"]
        for k, by in keyed.items():
            if "cython" in by and "python" in by:
                print(f"speedup cython vs python [{shape_key}={k}]: {by['python'] / by['cython']:.1f}x")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
