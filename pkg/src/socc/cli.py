"""Command-line interface.

Exit codes: 0 success, 1 processing failure, 2 usage error.  The
RENO_THREADS environment variable caps worker threads (BLAS pools).
JSON reports go to stdout with --json.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import codec, metrics, ply
from .errors import CodecError, EmptyInputError
from .model import TopModel
from .synthetic import ScanConfig, gen_scan
from .train import TrainConfig, train
from .voxel import quantize


def _limit_threads(limit: int | None = None) -> None:
    n = limit
    if n is None:
        env = os.environ.get("RENO_THREADS")
        n = int(env) if env else None
    if n:
        try:
            from threadpoolctl import threadpool_limits
            threadpool_limits(limits=n)
        except ImportError:
            pass


def _load_model(path) -> TopModel:
    return TopModel.load(path)


def _emit(report: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(report, indent=2))
    else:
        for k, v in report.items():
            print(f"{k}: {v}")


def _cmd_encode(args) -> int:
    points = ply.read_points(args.input)
    if len(points) == 0:
        raise EmptyInputError("input cloud is empty")
    model = _load_model(args.model)
    blob, summary = codec.encode_file(points, args.depth, model, one_stage=args.one_stage)
    Path(args.output).write_bytes(blob)
    Path(str(args.output) + ".json").write_text(json.dumps(summary.to_dict(), indent=2))
    _emit(summary.to_dict(), args.json)
    return 0


def _cmd_decode(args) -> int:
    data = Path(args.input).read_bytes()
    model = _load_model(args.model)
    points = codec.decode_file(data, model, strict=args.strict)
    ply.write_points(points, args.output, fmt=args.format)
    _emit({"points": len(points), "output": str(args.output)}, args.json)
    return 0


def _synthetic_dataset(cfg: dict, depth: int):
    count = int(cfg.pop("count", 64))
    base = ScanConfig(**cfg)
    geoms = []
    for i in range(count):
        cfg_i = ScanConfig(seed=base.seed + i, rings=base.rings,
                           points_per_ring=base.points_per_ring,
                           scene=base.scene, noise_sigma=base.noise_sigma)
        geoms.append(quantize(gen_scan(cfg_i), depth)[0])
    return geoms


def _parse_config_arg(text: str) -> dict:
    path = Path(text)
    if path.exists():
        return json.loads(path.read_text())
    return json.loads(text)


def _cmd_train(args) -> int:
    if (args.data is None) == (args.synthetic is None):
        print("train: exactly one of --data or --synthetic is required", file=sys.stderr)
        return 2
    if args.data:
        paths = sorted(p for p in Path(args.data).iterdir()
                       if p.suffix.lower() in (".ply", ".xyz", ".txt"))
        if not paths:
            raise EmptyInputError(f"no point-cloud files in {args.data}")
        geoms = [quantize(ply.read_points(p), args.depth)[0] for p in paths]
    else:
        geoms = _synthetic_dataset(_parse_config_arg(args.synthetic), args.depth)

    cfg = TrainConfig(steps=args.steps, lr=args.lr, seed=args.seed,
                      channels=args.channels, eval_every=args.eval_every,
                      holdout=args.holdout)
    model, history = train(geoms, cfg)
    model.save(args.out)
    Path(str(args.out) + ".history.json").write_text(json.dumps(history, indent=2))
    last_eval = history["eval"][-1] if history["eval"] else None
    _emit({"model": str(args.out), "steps": cfg.steps, "samples": len(geoms),
           "parameters": model.param_count(), "final_eval": last_eval}, args.json)
    return 0


def _cmd_eval(args) -> int:
    ref = ply.read_points(args.ref)
    test = ply.read_points(args.test)
    report = metrics.distortion_report(ref, test, peak=args.peak)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def _cmd_bench(args) -> int:
    from .bench import run_bench
    points = ply.read_points(args.input)
    if args.model:
        model = _load_model(args.model)
    else:
        model = TopModel(channels=args.channels)
        model.init_params(args.seed)
    report = run_bench(points, args.depth, model, repeat=args.repeat)
    print(json.dumps(report, indent=2))
    return 0


def _cmd_gen_data(args) -> int:
    cfg = _parse_config_arg(args.config)
    count = int(cfg.pop("count", 1))
    base = ScanConfig(**cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i in range(count):
        cfg_i = ScanConfig(seed=base.seed + i, rings=base.rings,
                           points_per_ring=base.points_per_ring,
                           scene=base.scene, noise_sigma=base.noise_sigma)
        path = out / f"scan_{i:04d}.ply"
        ply.write_points(gen_scan(cfg_i), path)
        names.append(path.name)
    _emit({"out": str(out), "files": len(names)}, args.json)
    return 0


def _cmd_info(args) -> int:
    data = Path(args.model).read_bytes()
    model = _load_model(args.model)
    from .nn import fnv1a64
    _emit({
        "parameters": model.param_count(),
        "bytes": len(data),
        "fnv1a64": f"{fnv1a64(data):016x}",
        "channels": model.channels,
        "kernel_size": model.kernel_size,
    }, args.json)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="socc",
                                 description="sparse-occupancy-code point cloud codec")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="compress a point cloud")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--depth", type=int, default=12)
    p.add_argument("--model", required=True)
    p.add_argument("--one-stage", action="store_true", dest="one_stage")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("decode", help="decompress a bitstream")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--format", choices=("binary", "text", "xyz"), default="binary")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("train", help="train the occupancy predictor")
    p.add_argument("--data", help="directory of point-cloud files")
    p.add_argument("--synthetic", help="scan-config JSON (inline or a path)")
    p.add_argument("--depth", type=int, default=12)
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--eval-every", type=int, default=500, dest="eval_every")
    p.add_argument("--holdout", type=int, default=4)
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="distortion metrics between two clouds")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--peak", type=float, default=59.70)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="stage-timing benchmark, both coding modes")
    p.add_argument("--input", required=True)
    p.add_argument("--depth", type=int, default=12)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--model")
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("gen-data", help="write synthetic scans as PLY files")
    p.add_argument("--config", required=True, help="ScanConfig JSON (inline or a path)")
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("info", help="model file statistics")
    p.add_argument("--model", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_info)
    return ap


def main(argv=None) -> int:
    _limit_threads()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CodecError, OSError, json.JSONDecodeError, TypeError) as exc:
        print(f"socc {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
