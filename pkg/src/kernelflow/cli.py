"""``kernelflow`` command-line interface.

Subcommands: ``estimate``, ``benchmark``, ``synth``, ``export-viz``.
Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Configuration precedence is CLI flags, then ``--config`` JSON, then defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .core import ContractError
from .embed import EMBEDDINGS
from .io import (
    ManifestEntry,
    ParseError,
    export_ply,
    read_flow,
    read_manifest,
    read_points,
    write_flow,
    write_manifest,
    write_points,
)
from .kernel import KERNELS
from .metrics import MetricReport
from .optimize import OptimizationError
from .pipeline import LOSSES, RunConfig, estimate
from .synth import SceneSpec, generate, make_objects

log = logging.getLogger("kernelflow")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

# flag dest -> (config key, nested under "optim")
_FLAG_KEYS = {
    "embedding": ("embedding", False),
    "rff_dim": ("rff_dim", False),
    "rff_scale": ("rff_scale", False),
    "peat_weights": ("peat_weights", False),
    "peat_dk": ("peat_dk", False),
    "peat_dv": ("peat_dv", False),
    "knn": ("knn", False),
    "kernel": ("kernel", False),
    "sigma": ("sigma", False),
    "sinc_squared": ("sinc_squared", False),
    "support": ("support", False),
    "grid_spacing": ("grid_spacing", False),
    "grid_max_per_axis": ("grid_max_per_axis", False),
    "grid_padding": ("grid_padding", False),
    "loss": ("loss", False),
    "dt_spacing": ("dt_spacing", False),
    "dt_padding": ("dt_padding", False),
    "voxel_budget": ("voxel_budget", False),
    "seed": ("seed", False),
    "learning_rate": ("learning_rate", True),
    "max_iters": ("max_iters", True),
    "lambda_l1": ("lambda_l1", True),
    "early_stop_patience": ("early_stop_patience", True),
    "early_stop_min_delta": ("early_stop_min_delta", True),
}


class UsageError(Exception):
    pass


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration")
    g.add_argument("--config", type=Path, help="JSON file with RunConfig fields")
    g.add_argument("--embedding", choices=EMBEDDINGS)
    g.add_argument("--rff-dim", type=int)
    g.add_argument("--rff-scale", type=float, help="RFF bandwidth beta")
    g.add_argument("--peat-weights", help="PEAT weight file (random seeded weights if omitted)")
    g.add_argument("--peat-dk", type=int)
    g.add_argument("--peat-dv", type=int)
    g.add_argument("--knn", type=int, help="neighbourhood size L for peat-knn")
    g.add_argument("--kernel", choices=KERNELS)
    g.add_argument("--sigma", type=float)
    g.add_argument("--sinc-unsquared", dest="sinc_squared", action="store_const", const=False,
                   help="use |x - y| rather than |x - y|^2 inside sinc")
    g.add_argument("--support", choices=("grid", "target-points"))
    g.add_argument("--grid-spacing", type=float)
    g.add_argument("--grid-max-per-axis", type=int)
    g.add_argument("--grid-padding", type=float)
    g.add_argument("--loss", choices=LOSSES)
    g.add_argument("--dt-spacing", type=float)
    g.add_argument("--dt-padding", type=float)
    g.add_argument("--voxel-budget", type=int)
    g.add_argument("--lr", dest="learning_rate", type=float)
    g.add_argument("--max-iters", type=int)
    g.add_argument("--lambda-l1", type=float)
    g.add_argument("--patience", dest="early_stop_patience", type=int)
    g.add_argument("--min-delta", dest="early_stop_min_delta", type=float)
    g.add_argument("--seed", type=int)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    raw: dict = {}
    if getattr(args, "config", None) is not None:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise UsageError(f"config {args.config} must hold a JSON object")
    optim = dict(raw.pop("optim", None) or {})
    for dest, (key, nested) in _FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        (optim if nested else raw)[key] = value
    raw["optim"] = optim
    try:
        return RunConfig.from_dict(raw).resolved()
    except (ContractError, TypeError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def _dump(obj, path: Path | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------


def cmd_estimate(args) -> int:
    cfg = resolve_config(args)
    source, target = read_points(args.source), read_points(args.target)
    gt = read_flow(args.gt) if args.gt else None
    if gt is not None and len(gt) != len(source):
        raise ContractError(f"gt flow has {len(gt)} vectors but source has {len(source)} points")
    est = estimate(source, target, cfg)
    write_flow(args.output, est.flow)
    if args.trace:
        est.trace.write_jsonl(args.trace)
    record = {
        "command": "estimate",
        "version": __version__,
        "config": cfg.to_dict(),
        "source": str(args.source),
        "target": str(args.target),
        "num_points": len(source),
        "num_supports": est.num_supports,
        "optimization": est.trace.summary(),
        "stages_s": est.stages,
        "time_s": est.time_s,
    }
    if gt is not None:
        record["metrics"] = MetricReport.compute(est.flow, gt, est.time_s).to_json()
    _dump(record, args.record)
    return EXIT_OK


def _run_sample(entry: ManifestEntry, cfg_dict: dict) -> dict:
    cfg = RunConfig.from_dict(cfg_dict)
    source, target = read_points(entry.source), read_points(entry.target)
    est = estimate(source, target, cfg)
    rec = {
        "id": entry.id,
        "num_points": len(source),
        "iterations": len(est.trace),
        "stop_reason": est.trace.stop_reason,
    }
    if entry.gt_flow is None:
        rec["metrics"] = {"time_s": est.time_s}
    else:
        gt = read_flow(entry.gt_flow)
        rec["metrics"] = MetricReport.compute(est.flow, gt, est.time_s).to_json()
    return rec


def _mean_block(samples: list[dict]) -> dict:
    keys = ("epe_m", "acc5_pct", "acc10_pct", "angle_rad")
    full = [s["metrics"] for s in samples if "epe_m" in s["metrics"]]
    out = {k: float(np.mean([m[k] for m in full])) for k in keys} if full else {}
    out["time_s"] = float(np.mean([s["metrics"]["time_s"] for s in samples]))
    out["num_samples"] = len(samples)
    out["num_with_gt"] = len(full)
    return out


def cmd_benchmark(args) -> int:
    cfg = resolve_config(args)
    entries = read_manifest(args.manifest)
    if not entries:
        raise ParseError(f"{args.manifest}: manifest has no samples")
    for e in entries:
        if e.gt_flow is None:
            log.warning("sample %r has no gt_flow; only time_s is reported for it", e.id)
    cfg_dict = cfg.to_dict()
    if args.parallel_samples > 1:
        with ProcessPoolExecutor(max_workers=args.parallel_samples) as pool:
            samples = list(pool.map(_run_sample, entries, [cfg_dict] * len(entries)))
    else:
        samples = [_run_sample(e, cfg_dict) for e in entries]
    _dump({
        "command": "benchmark",
        "version": __version__,
        "config": cfg_dict,
        "manifest": str(args.manifest),
        "samples": samples,
        "mean": _mean_block(samples),
    }, args.output)
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.objects < 0 or args.noise < 0 or args.background_points < 0:
        raise UsageError("--objects, --noise and --background-points must be non-negative")
    if args.background_points + args.objects == 0:
        raise UsageError("scene would be empty")
    spec = SceneSpec(
        background_points=args.background_points,
        objects=make_objects(args.objects, args.seed),
        noise=args.noise,
        seed=args.seed,
    )
    scene = generate(spec)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    sid = args.id or f"synth-{args.seed:04d}"
    ext = args.format
    src, tgt, gt = (out / f"{sid}_{part}.{e}" for part, e in
                    (("source", ext), ("target", ext), ("gt", "flw" if ext == "pcf" else "xyz")))
    write_points(src, scene.source)
    write_points(tgt, scene.target)
    write_flow(gt, scene.flow)
    manifest = out / "manifest.json"
    entries = [e for e in read_manifest(manifest) if e.id != sid] if manifest.exists() else []
    entries.append(ManifestEntry(sid, src, tgt, gt))
    write_manifest(manifest, entries)
    log.info("wrote %s (%d points) and updated %s", sid, len(scene.source), manifest)
    return EXIT_OK


def cmd_export_viz(args) -> int:
    cloud, flow = read_points(args.cloud), read_flow(args.flow)
    export_ply(cloud, flow, args.output)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kernelflow", description="Kernel-coefficient scene flow estimation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="WARNING", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate flow for one source/target pair")
    p.add_argument("source", type=Path)
    p.add_argument("target", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True, help="predicted flow (.flw or .xyz)")
    p.add_argument("--gt", type=Path, help="ground-truth flow; adds metrics to the record")
    p.add_argument("--record", type=Path, help="run record JSON (stdout if omitted)")
    p.add_argument("--trace", type=Path, help="per-iteration loss trace (JSON lines)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("benchmark", help="run every pair in a manifest and aggregate metrics")
    p.add_argument("manifest", type=Path)
    p.add_argument("-o", "--output", type=Path, help="result JSON (stdout if omitted)")
    p.add_argument("--parallel-samples", type=int, default=1, metavar="N",
                   help="process N samples concurrently (timings then share the CPU)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("synth", help="write a synthetic pair with ground truth and a manifest entry")
    p.add_argument("output_dir", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--objects", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--background-points", type=int, default=SceneSpec.background_points)
    p.add_argument("--format", choices=("pcf", "xyz"), default="pcf")
    p.add_argument("--id", help="sample id (default synth-<seed>)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("export-viz", help="write an ASCII PLY coloured by flow")
    p.add_argument("cloud", type=Path)
    p.add_argument("flow", type=Path)
    p.add_argument("output", type=Path)
    p.set_defaults(func=cmd_export_viz)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"kernelflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, ContractError, OptimizationError, OSError, np.linalg.LinAlgError) as exc:
        print(f"kernelflow: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
