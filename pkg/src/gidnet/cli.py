"""Command-line interface: ``gidnet {init,sr,count,eval,train,verify}``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

from . import analysis, verify
from .archive import load_weights, save_weights
from .errors import GidnetError
from .imaging import EvalProtocol, eval_dataset, image_to_tensor, load_png, save_png, tensor_to_image
from .model import ModelConfig, build_model, model_forward
from .training import load_config, train


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError("input size must be positive")
    return h, w


def cmd_init(args) -> int:
    cfg = ModelConfig(core=args.core, use_nla=args.nla, scale=args.scale, nla_tile=args.nla_tile)
    model = build_model(cfg, args.seed)
    save_weights(model, args.out)
    print(f"wrote {args.out}: core={cfg.core} nla={int(cfg.use_nla)} scale={cfg.scale} "
          f"params={analysis.count_parameters(model)} convs={model.num_convs}")
    return 0


def cmd_sr(args) -> int:
    model = load_weights(args.model)
    img = load_png(args.input)
    save_png(tensor_to_image(model_forward(model, image_to_tensor(img))), args.out)
    return 0


def cmd_count(args) -> int:
    cfg = ModelConfig(core=args.core, use_nla=args.nla, scale=args.scale, nla_tile=args.nla_tile)
    h, w = args.input_size
    report = analysis.complexity_report(cfg, h, w, attention=args.attention)
    print(report.to_kv() if args.format == "kv" else report.to_text())
    return 0


def cmd_eval(args) -> int:
    if args.bicubic == bool(args.model):
        print("error: give exactly one of --model or --bicubic", file=sys.stderr)
        return 2
    model = None if args.bicubic else load_weights(args.model)
    scale = args.scale if model is None else model.config.scale
    proto = EvalProtocol(scale=scale, shave=args.shave, luminance=args.y)
    report = eval_dataset(model, args.hr_dir, proto)
    print(report.to_kv() if args.format == "kv" else report.to_text())
    return 0


def _load_dir(path) -> list:
    paths = sorted(p for p in Path(path).iterdir() if p.suffix.lower() == ".png")
    if not paths:
        raise FileNotFoundError(f"no PNG images in {path}")
    return [load_png(p) for p in paths]


def cmd_train(args) -> int:
    model_cfg, train_cfg, schedule = load_config(args.config)
    if args.seed is not None:
        train_cfg.seed = args.seed
    data = _load_dir(args.data)
    val = _load_dir(args.val_dir) if args.val_dir else None
    model = load_weights(args.init, model_cfg) if args.init else build_model(model_cfg, train_cfg.seed)
    result = train(model, data, train_cfg, schedule, val_set=val, out_dir=args.out)
    for e in result.epochs:
        print(e.line())
    return 0


def cmd_verify(args) -> int:
    suites = list(verify.SUITES) if args.suite == "all" else [args.suite]
    checks = verify.run(suites)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gidnet", description="IMDeception super-resolution engine")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap worker threads (default: $GIDNET_THREADS or all cores)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def model_flags(p):
        p.add_argument("--core", type=int, default=16)
        p.add_argument("--nla", action="store_true", help="enable the two attention blocks")
        p.add_argument("--scale", type=int, default=4)
        p.add_argument("--nla-tile", type=int, default=16)

    p = sub.add_parser("init", help="write a freshly initialized weight archive")
    model_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("sr", help="super-resolve one PNG")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sr)

    p = sub.add_parser("count", help="print the complexity report")
    model_flags(p)
    p.add_argument("--input-size", type=_size, default=analysis.REFERENCE_SIZE)
    p.add_argument("--attention", action="store_true", help="also report attention matmul MACs")
    p.add_argument("--format", choices=("text", "kv"), default="text")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("eval", help="PSNR over a directory of HR PNGs")
    p.add_argument("--model")
    p.add_argument("--bicubic", action="store_true", help="score plain bicubic upscaling")
    p.add_argument("--hr-dir", required=True)
    p.add_argument("--y", action="store_true", help="score the luminance channel")
    p.add_argument("--shave", type=int, default=4)
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--format", choices=("text", "kv"), default="text")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", help="train from a key=value config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--val-dir")
    p.add_argument("--init", help="start from this archive instead of a fresh model")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", help="run the built-in oracle suites")
    p.add_argument("--suite", choices=("ops", "counters", "grad", "all"), default="all")
    p.set_defaults(func=cmd_verify)
    return parser


def _thread_limit(n: int | None):
    if n is None:
        env = os.environ.get("GIDNET_THREADS")
        n = int(env) if env else None
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, n))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with _thread_limit(args.threads):
            return args.func(args)
    except (GidnetError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
