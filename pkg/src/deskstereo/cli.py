"""Command-line entry point: gen, train, eval, infer.

Exit codes: 0 ok, 1 training aborted (non-finite loss), 2 config error,
3 data or I/O error, 4 contract violation.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .config import describe, load_config
from .errors import ConfigError, ContractError, DataError, TrainingError
from .fileio import read_pfm, read_ppm, write_pfm, write_ppm
from .synthetic import StereoSample, generate

EXIT_OK, EXIT_ABORT, EXIT_CONFIG, EXIT_DATA, EXIT_CONTRACT = 0, 1, 2, 3, 4
MANIFEST = "manifest.txt"


# -- gen -------------------------------------------------------------------


def write_dataset(out: Path, samples: list[StereoSample]) -> Path:
    """Write each sample as left/right PPM plus disparity/occlusion PFM; the manifest
    holds one line per sample with the four relative paths."""
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, s in enumerate(samples):
        names = [f"{i:05d}_left.ppm", f"{i:05d}_right.ppm", f"{i:05d}_disp.pfm", f"{i:05d}_occ.pfm"]
        write_ppm(s.left, out / names[0])
        write_ppm(s.right, out / names[1])
        write_pfm(s.disparity, out / names[2])
        write_pfm(s.occlusion.astype(np.float32), out / names[3])
        lines.append(" ".join(names))
    manifest = out / MANIFEST
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def read_dataset(root: Path) -> list[StereoSample]:
    manifest = root / MANIFEST
    if not manifest.is_file():
        raise DataError(f"no {MANIFEST} in {root}")
    samples = []
    for lineno, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise DataError(f"{manifest}:{lineno}: expected 4 paths, got {len(parts)}")
        left, right = read_ppm(root / parts[0]), read_ppm(root / parts[1])
        disp, occ = read_pfm(root / parts[2]), read_pfm(root / parts[3])
        samples.append(StereoSample(left, right, disp, occ > 0.5, seed=lineno - 1))
    if not samples:
        raise DataError(f"{manifest} lists no samples")
    return samples


def cmd_gen(args) -> int:
    samples = [
        generate(args.width, args.height, args.layers, args.max_disp, args.seed + i)
        for i in range(args.count)
    ]
    manifest = write_dataset(Path(args.out), samples)
    print(f"wrote {len(samples)} samples to {manifest.parent}")
    return EXIT_OK


# -- train -----------------------------------------------------------------


def _config_from(args):
    return load_config(args.config, args.set or ())


def cmd_train(args) -> int:
    from .training import Trainer

    if args.resume:
        if args.set or args.config:
            raise ConfigError("--resume takes its config from the checkpoint; drop --config/--set")
        trainer = Trainer.resume(args.resume)
    else:
        trainer = Trainer(_config_from(args))
    log_path = args.log if args.log else f"{args.out}.log.jsonl"
    if not args.resume and os.path.exists(log_path):
        os.remove(log_path)
    print(f"config: {trainer.config.to_json()}")
    trainer.run(log_path=log_path, echo=print)
    trainer.save(args.out)
    print(f"checkpoint written to {args.out} after {trainer.step} steps")
    return EXIT_OK


# -- eval ------------------------------------------------------------------


def cmd_eval(args) -> int:
    from .evaluation import evaluate
    from .training import load_model

    samples = read_dataset(Path(args.data))
    model, ckpt = load_model(args.ckpt)
    iters = args.iters if args.iters is not None else ckpt.config.iterations_eval
    taus = ckpt.config.replace(taus=args.taus).tau_list() if args.taus else ckpt.config.tau_list()
    report = evaluate(model, samples, iters, taus)
    print(report.table())
    out = args.report if args.report else os.path.join(args.data, "report.jsonl")
    report.write(out)
    print(f"report written to {out}")
    return EXIT_OK


# -- infer -----------------------------------------------------------------


def colorize(disp: np.ndarray) -> np.ndarray:
    """[H, W] disparity -> [3, H, W] in [0, 1]; near (large disparity) is warm."""
    lo, hi = float(disp.min()), float(disp.max())
    t = (disp - lo) / (hi - lo) if hi > lo else np.zeros_like(disp)
    r = np.clip(1.5 - np.abs(4 * t - 3), 0, 1)
    g = np.clip(1.5 - np.abs(4 * t - 2), 0, 1)
    b = np.clip(1.5 - np.abs(4 * t - 1), 0, 1)
    return np.stack([r, g, b])


def cmd_infer(args) -> int:
    from .training import load_model

    left, right = read_ppm(args.left), read_ppm(args.right)
    if left.shape != right.shape:
        raise ContractError(f"left {left.shape[1:]} and right {right.shape[1:]} sizes differ")
    h, w = left.shape[1:]
    if h % 32 or w % 32:
        raise ContractError(f"image size {h}x{w} is not divisible by 32")
    model, ckpt = load_model(args.ckpt)
    if model.config.mono_mode == "oracle":
        model = load_model(args.ckpt, mono_mode="network")[0]
    iters = args.iters if args.iters is not None else ckpt.config.iterations_eval
    disp = model.predict(left[None], right[None], iters)[0]
    write_pfm(disp, args.out)
    if args.viz:
        write_ppm(colorize(disp[0]), args.viz)
    print(f"disparity written to {args.out}")
    return EXIT_OK


# -- entry -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deskstereo", description="Iterative stereo matching at desk scale.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write synthetic stereo samples")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=8)
    g.add_argument("--width", type=int, default=128)
    g.add_argument("--height", type=int, default=64)
    g.add_argument("--max-disp", type=float, default=24.0)
    g.add_argument("--layers", type=int, default=2)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--config", help="key=value config file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", help="training log path (default: <out>.log.jsonl)")
    t.add_argument("--resume", help="continue from this checkpoint")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a generated dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--iters", type=int)
    e.add_argument("--taus", help="comma-separated thresholds, e.g. 1.0,2.0,3.0")
    e.add_argument("--report", help="report path (default: <data>/report.jsonl)")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="predict disparity for one image pair")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--left", required=True)
    i.add_argument("--right", required=True)
    i.add_argument("--out", required=True, help="output PFM")
    i.add_argument("--viz", help="optional color-mapped PPM")
    i.add_argument("--iters", type=int)
    i.set_defaults(func=cmd_infer)

    c = sub.add_parser("config", help="print every config key with its default")
    c.set_defaults(func=lambda args: print(describe()) or EXIT_OK)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except ContractError as exc:
        print(f"contract error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
