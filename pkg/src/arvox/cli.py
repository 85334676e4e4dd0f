"""Command-line interface.

Subcommands: schedule, infer, eval, bam-bench, kernel-bench, selftest, gen.
Exit codes: 0 success, 2 configuration/argument error, 3 I/O error,
4 invariant failure.  All reports are JSON on stdout; given identical inputs
and seeds, non-timing outputs are byte-identical across runs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from arvox import bench, io, selftest as selftest_mod
from arvox.context import ContextPair, ContextSet
from arvox.errors import ArvoxError, ConfigError, DataIOError, InvalidArgumentError
from arvox.metrics import dice, psnr
from arvox.pipeline import InferenceRequest, infer, infer_ablation_no_naicl
from arvox.schedule import make_schedule, plan_tiles
from arvox.synthetic import KINDS, SyntheticSpec, generate_synthetic
from arvox.unet import UNetConfig
from arvox.volume import Shape3, Volume
from arvox.weights import WeightStore, init_weights

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_INVARIANT = 4

# RunConfig keys that map straight onto UNetConfig fields
_UNET_KEYS = ("stages", "base_channels", "patch_edge", "target_channels",
              "context_channels", "ar_channels", "bam_p", "bam_m",
              "fusion_stages_encoder", "fusion_stages_decoder")


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _parse_shape(text: str) -> Shape3:
    parts = text.lower().replace("x", ",").split(",")
    if len(parts) != 3:
        raise ConfigError(f"shape must be H,W,D or HxWxD, got {text!r}")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"shape entries must be integers, got {text!r}") from None
    if min(dims) < 1:
        raise ConfigError(f"shape extents must be positive, got {dims}")
    return Shape3(*dims)


def _load_config_file(path) -> dict:
    try:
        raw = Path(path).read_text()
    except OSError as e:
        raise DataIOError(f"cannot read config {path}: {e}") from e
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return doc


def _unet_config(args, doc: dict) -> UNetConfig:
    kwargs = {}
    for key in _UNET_KEYS:
        if key in doc:
            kwargs[key] = doc[key]
        flag = getattr(args, key, None)
        if flag is not None:
            kwargs[key] = flag
    for key in ("fusion_stages_encoder", "fusion_stages_decoder"):
        if isinstance(kwargs.get(key), list):
            kwargs[key] = tuple(kwargs[key])
    unknown = set(doc) - set(_UNET_KEYS) - {
        "overlap_fraction", "task_kind", "seed", "stub_mode",
        "target", "context_manifest", "weights", "out", "trace",
    }
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return UNetConfig(**kwargs)


def _load_context_manifest(path) -> ContextSet:
    try:
        raw = Path(path).read_text()
    except OSError as e:
        raise DataIOError(f"cannot read context manifest {path}: {e}") from e
    try:
        entries = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ConfigError(f"context manifest {path} is not valid JSON: {e}") from e
    if not isinstance(entries, list) or not entries:
        raise ConfigError("context manifest must be a non-empty JSON array")
    base = Path(path).parent
    pairs = []
    for i, ent in enumerate(entries):
        if not isinstance(ent, dict) or "image" not in ent or "label" not in ent:
            raise ConfigError(
                f"context manifest entry {i} must be {{\"image\": ..., \"label\": ...}}"
            )
        img = io.read_mv3d(base / ent["image"] if not Path(ent["image"]).is_absolute()
                           else ent["image"])
        lab = io.read_mv3d(base / ent["label"] if not Path(ent["label"]).is_absolute()
                           else ent["label"])
        pairs.append(ContextPair(img, lab))
    return ContextSet(tuple(pairs))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_schedule(args) -> int:
    shape = _parse_shape(args.shape)
    sched = make_schedule(shape, args.patch_edge)
    tiles = []
    for t in range(1, sched.T + 1):
        if t == 1:
            tiles.append(1)
        else:
            tiles.append(len(plan_tiles(sched.dims[t - 1], sched.patch_edge,
                                        args.overlap).origins))
    _emit({"T": sched.T, "dims": [list(d) for d in sched.dims],
           "tiles_per_step": tiles})
    return EXIT_OK


def cmd_infer(args) -> int:
    doc = _load_config_file(args.config) if args.config else {}
    cfg = _unet_config(args, doc)
    target = io.read_mv3d(args.target or doc.get("target") or _missing("--target"))
    manifest = args.context_manifest or doc.get("context_manifest")
    if manifest is None:
        _missing("--context-manifest")
    context = _load_context_manifest(manifest)
    stub = args.stub or bool(doc.get("stub_mode", False))

    w = None
    if not stub:
        weights_path = args.weights or doc.get("weights")
        if weights_path is None:
            raise ConfigError("either --weights or --stub is required")
        w = WeightStore.load(weights_path, cfg)

    task = {"seg": "segmentation", "reg": "regression"}[args.task]
    req = InferenceRequest(
        target=target, context=context, config=cfg, task_kind=task,
        overlap_fraction=(args.overlap if args.overlap is not None
                          else float(doc.get("overlap_fraction", 0.25))),
        na_icl_enabled=not args.no_naicl,
        model="identity" if stub else "unet",
    )
    if args.no_naicl:
        y = infer_ablation_no_naicl(req, w)
        trace = None
    else:
        y, trace = infer(req, w)
    out = args.out or doc.get("out")
    if out is None:
        _missing("--out")
    io.write_mv3d(out, y)
    written = {"out": str(out)}
    if trace is not None and req.task_kind == "segmentation" and trace.companion_mask is not None:
        mask_path = str(out) + ".mask"
        io.write_mv3d(mask_path, trace.companion_mask)
        written["mask"] = mask_path
    trace_path = args.trace or doc.get("trace")
    if trace_path and trace is not None:
        Path(trace_path).write_text(
            json.dumps(trace.as_json_dict(), indent=2, sort_keys=True) + "\n"
        )
        written["trace"] = str(trace_path)
    _emit(written)
    return EXIT_OK


def _missing(flag: str):
    raise ConfigError(f"{flag} is required")


def cmd_eval(args) -> int:
    pred = io.read_mv3d(args.pred)
    ref = io.read_mv3d(args.ref)
    if args.metric == "dice":
        value = dice(pred, ref)
        _emit({"dice": value})
    else:
        value = psnr(pred, ref, peak=args.peak)
        _emit({"psnr": "inf" if value == float("inf") else value})
    return EXIT_OK


def cmd_bam_bench(args) -> int:
    edges = [int(e) for e in args.edges.split(",")]
    report = bench.bam_bench(edges, p=args.p, channels=args.channels,
                             m=args.m, seed=args.seed)
    _emit(report)
    return EXIT_OK


def cmd_kernel_bench(args) -> int:
    from arvox import kernel_bench
    _emit(kernel_bench.compare_backends(edge=args.edge, channels=args.channels,
                                        seed=args.seed))
    return EXIT_OK


def cmd_selftest(args) -> int:
    report = selftest_mod.selftest(num_shapes=args.shapes, seed=args.seed,
                                   inject_fault=args.inject_fault)
    _emit(report)
    return EXIT_OK if report["all_passed"] else EXIT_INVARIANT


def cmd_gen(args) -> int:
    spec = SyntheticSpec(shape=_parse_shape(args.shape), kind=args.kind,
                         seed=args.seed, sigma=args.sigma, rho=args.rho)
    image, label = generate_synthetic(spec)
    io.write_mv3d(args.out_image, image)
    written = {"image": args.out_image}
    if args.out_label:
        io.write_mv3d(args.out_label, label)
        written["label"] = args.out_label
    _emit(written)
    return EXIT_OK


def cmd_gen_weights(args) -> int:
    doc = _load_config_file(args.config) if args.config else {}
    cfg = _unet_config(args, doc)
    store = init_weights(cfg, seed=args.seed)
    store.save(args.out)
    _emit({"weights": args.out, "tensors": len(store.names())})
    return EXIT_OK


# ---------------------------------------------------------------------------

def _add_unet_flags(p: argparse.ArgumentParser):
    p.add_argument("--stages", type=int, default=None)
    p.add_argument("--base-channels", dest="base_channels", type=int, default=None)
    p.add_argument("--patch-edge", dest="patch_edge", type=int, default=None)
    p.add_argument("--bam-p", dest="bam_p", type=int, default=None)
    p.add_argument("--bam-m", dest="bam_m", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="arvox",
        description="Coarse-to-fine in-context volumetric inference toolkit",
    )
    ap.add_argument("--threads", type=int, default=1,
                    help="cap on worker threads (kernels are serial per worker)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule", help="print the step ladder and tile counts")
    p.add_argument("--shape", required=True, help="target extents H,W,D")
    p.add_argument("--patch-edge", dest="patch_edge", type=int, default=128)
    p.add_argument("--overlap", type=float, default=0.25)
    p.set_defaults(fn=cmd_schedule)

    p = sub.add_parser("infer", help="run coarse-to-fine inference on a volume")
    p.add_argument("--target", help="target MV3D file")
    p.add_argument("--context-manifest", dest="context_manifest",
                   help="JSON array of {image, label} MV3D paths")
    p.add_argument("--weights", help="MVWT weight file")
    p.add_argument("--task", choices=("seg", "reg"), default="reg")
    p.add_argument("--overlap", type=float, default=None)
    p.add_argument("--no-naicl", dest="no_naicl", action="store_true",
                   help="single-scale sliding-window ablation (no AR context)")
    p.add_argument("--stub", action="store_true",
                   help="identity model stub instead of network weights")
    p.add_argument("--out", help="output MV3D path")
    p.add_argument("--trace", help="write step trace JSON here")
    p.add_argument("--config", help="JSON run config; flags override it")
    _add_unet_flags(p)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="compare a prediction against a reference")
    p.add_argument("--metric", choices=("dice", "psnr"), required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--peak", type=float, default=1.0)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bam-bench",
                       help="blockwise vs dense attention timing/FLOP report")
    p.add_argument("--edges", default="8,16,32")
    p.add_argument("--p", type=int, default=4)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--m", type=int, default=66)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_bam_bench)

    p = sub.add_parser("kernel-bench",
                       help="compare the jitted and pure-numpy kernel backends")
    p.add_argument("--edge", type=int, default=24)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_kernel_bench)

    p = sub.add_parser("selftest", help="run the built-in invariant suite")
    p.add_argument("--shapes", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", dest="inject_fault", default=None,
                   choices=selftest_mod.FAULTS,
                   help="deliberately break a fixture to prove the suite bites")
    p.set_defaults(fn=cmd_selftest)

    p = sub.add_parser("gen", help="generate a synthetic volume pair")
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--shape", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--rho", type=float, default=0.05)
    p.add_argument("--out-image", dest="out_image", required=True)
    p.add_argument("--out-label", dest="out_label", default=None)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("gen-weights",
                       help="write seeded random weights for the configured model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON run config; flags override it")
    _add_unet_flags(p)
    p.set_defaults(fn=cmd_gen_weights)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except (ConfigError, InvalidArgumentError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataIOError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except ArvoxError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
