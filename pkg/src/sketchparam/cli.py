"""Command-line entry point.

Subcommands: synth-gen, render, handdraw, train-srn, pretrain-spn,
finetune-spn, train-semi, infer, ttopt, eval, gradcheck. Runs that produce
outputs write a manifest.json (config + seed + source version) next to them.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with code 2
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="sketchparam",
                     description="CAD sketch parameterization from raster images")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON run config (RunConfig fields)")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--out", help="output directory")
        return p

    p = add("synth-gen", "generate a synthetic corpus")
    p.add_argument("--train", type=int, default=100)
    p.add_argument("--val", type=int, default=20)
    p.add_argument("--test", type=int, default=20)
    p.add_argument("--handdrawn", action="store_true",
                   help="also write hand-drawn-style renders")

    p = add("render", "rasterize a JSONL sketch file to PGM images")
    p.add_argument("--data", required=True, help="sketch JSONL path")

    p = add("handdraw", "render a JSONL sketch file with stroke perturbation")
    p.add_argument("--data", required=True, help="sketch JSONL path")

    add("train-srn", "train the renderer network")

    p = add("pretrain-spn", "pretrain the parameterizer through the frozen renderer")
    p.add_argument("--srn", required=True, help="renderer checkpoint")

    p = add("finetune-spn", "fine-tune the parameterizer with matched labels")
    p.add_argument("--spn", help="parameterizer checkpoint (omit for scratch)")
    p.add_argument("--data", help="labeled corpus directory")

    p = add("train-semi", "alternate rendering and parametric supervision")
    p.add_argument("--srn", required=True)
    p.add_argument("--labeled", required=True)
    p.add_argument("--unlabeled", required=True)

    p = add("infer", "predict a sketch from one image")
    p.add_argument("--spn", required=True)
    p.add_argument("--image", required=True, help="input PGM")
    p.add_argument("--quota", help="per-type primitive counts, e.g. line=4,circle=2")

    p = add("ttopt", "test-time refinement through the frozen renderer")
    p.add_argument("--spn", required=True)
    p.add_argument("--srn", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)

    p = add("eval", "score a checkpoint against a corpus split")
    p.add_argument("--spn", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")

    p = add("gradcheck", "finite-difference check of every differentiable op")
    p.add_argument("--tol", type=float, default=1e-2)
    return parser


def _load_config(args) -> "RunConfig":
    from .pipeline import RunConfig

    cfg = RunConfig.from_json(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    return cfg


def _parse_quota(text: str | None) -> dict | None:
    if not text:
        return None
    quota = {}
    for part in text.split(","):
        kind, _, count = part.partition("=")
        if not count:
            raise _UsageError(f"--quota entries look like kind=count, got {part!r}")
        quota[kind.strip()] = int(count)
    return quota


def _require_out(cfg) -> Path:
    if not cfg.out_dir:
        raise _UsageError("--out (or out_dir in the config) is required")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run(args) -> int:
    from . import pipeline
    from .datasets import parse_dataset
    from .nets import SketchParameterizer, SketchRenderer
    from .pipeline import RunConfig, write_manifest
    from .raster import HanddrawConfig, rasterize, read_pgm, synthesize_handdrawn, write_pgm
    from .synthgen import build_corpus

    cfg = _load_config(args)
    command = args.command

    if command == "synth-gen":
        out = _require_out(cfg)
        hd = HanddrawConfig(seed=cfg.seed) if args.handdrawn else None
        manifest = build_corpus(cfg.generator_config(), args.train, args.val,
                                args.test, out, cfg.image_size, hd)
        print(json.dumps(manifest["counts"]))
        return 0

    if command in ("render", "handdraw"):
        out = _require_out(cfg)
        sketches = parse_dataset(args.data)
        for i, sketch in enumerate(sketches):
            if command == "render":
                img = rasterize(sketch, cfg.image_size, cfg.image_size)
            else:
                per_image = HanddrawConfig(seed=cfg.seed + i)
                img = synthesize_handdrawn(sketch, per_image, cfg.image_size,
                                           cfg.image_size)
            write_pgm(img, out / f"{i:06d}.pgm")
        write_manifest(out, {"command": command, "config": cfg.to_dict(),
                             "count": len(sketches)})
        print(f"wrote {len(sketches)} images to {out}")
        return 0

    if command == "train-srn":
        _require_out(cfg)
        result = pipeline.train_srn(cfg, log=print)
        write_manifest(cfg.out_dir, {"command": command, "config": cfg.to_dict(),
                                     "final_loss": result.final_loss})
        print(f"final loss {result.final_loss:.6f} -> {result.checkpoint_path}")
        return 0

    if command == "pretrain-spn":
        _require_out(cfg)
        result = pipeline.pretrain_spn(cfg, args.srn, log=print)
        write_manifest(cfg.out_dir, {"command": command, "config": cfg.to_dict(),
                                     "final_loss": result.final_loss})
        print(f"final loss {result.final_loss:.6f} -> {result.checkpoint_path}")
        return 0

    if command == "finetune-spn":
        _require_out(cfg)
        result = pipeline.finetune_spn(cfg, args.spn, args.data, log=print)
        write_manifest(cfg.out_dir, {"command": command, "config": cfg.to_dict(),
                                     "final_loss": result.final_loss})
        print(f"final loss {result.final_loss:.6f} -> {result.checkpoint_path}")
        return 0

    if command == "train-semi":
        _require_out(cfg)
        result = pipeline.train_semi(cfg, args.labeled, args.unlabeled,
                                     args.srn, log=print)
        write_manifest(cfg.out_dir, {"command": command, "config": cfg.to_dict(),
                                     "final_loss": result.final_loss})
        print(f"final loss {result.final_loss:.6f} -> {result.checkpoint_path}")
        return 0

    if command == "infer":
        quota = _parse_quota(args.quota) or cfg.type_quota
        model = SketchParameterizer.from_checkpoint(cfg.parameterizer_config(),
                                                    args.spn)
        image = read_pgm(args.image)
        result = pipeline.zero_shot_infer(model, image, quota)
        from .datasets import sketch_to_obj

        obj = sketch_to_obj(result.sketch)
        if cfg.out_dir:
            out = _require_out(cfg)
            with (out / "prediction.jsonl").open("w", encoding="utf-8") as fh:
                fh.write(json.dumps(obj) + "\n")
            write_manifest(out, {"command": command, "config": cfg.to_dict()})
        print(json.dumps(obj))
        return 0

    if command == "ttopt":
        spn = SketchParameterizer.from_checkpoint(cfg.parameterizer_config(),
                                                  args.spn)
        srn = SketchRenderer.from_checkpoint(cfg.renderer_config(), args.srn)
        image = read_pgm(args.image)
        steps = args.steps if args.steps is not None else cfg.tto_steps
        lr = args.lr if args.lr is not None else cfg.tto_lr
        result = pipeline.test_time_optimize(spn, srn, image, steps, lr)
        from .datasets import sketch_to_obj

        payload = {
            "initial_loss": result.initial_loss,
            "final_loss": result.final_loss,
            "sketch": sketch_to_obj(result.sketch),
        }
        if cfg.out_dir:
            out = _require_out(cfg)
            with (out / "refined.json").open("w", encoding="utf-8") as fh:
                json.dump(payload, fh, indent=2)
                fh.write("\n")
            write_manifest(out, {"command": command, "config": cfg.to_dict(),
                                 "steps": steps, "lr": lr})
        print(f"loss {result.initial_loss:.5f} -> {result.final_loss:.5f}")
        return 0

    if command == "eval":
        model = SketchParameterizer.from_checkpoint(cfg.parameterizer_config(),
                                                    args.spn)
        out_path = Path(cfg.out_dir) / "report.json" if cfg.out_dir else None
        report = pipeline.evaluate(model, args.data, split=args.split,
                                   out_path=out_path,
                                   input_style=cfg.input_style,
                                   type_quota=cfg.type_quota)
        if cfg.out_dir:
            write_manifest(cfg.out_dir, {"command": command,
                                         "config": cfg.to_dict()})
        print(json.dumps(report["aggregate"]))
        return 0

    if command == "gradcheck":
        worst = _gradcheck_suite(args.tol)
        print(f"max relative error {worst:.3e} (tolerance {args.tol})")
        return 0 if worst < args.tol else 2

    raise _UsageError(f"unknown command {command!r}")


def _gradcheck_suite(tol: float) -> float:
    from . import autodiff as ad

    rng = np.random.default_rng(0)
    a = rng.normal(0.0, 1.0, (3, 6, 6)).astype(np.float32)
    b = rng.normal(0.0, 1.0, (3, 6, 6)).astype(np.float32)
    c = rng.normal(0.0, 1.0, (6, 6)).astype(np.float32)
    x = rng.normal(0.0, 1.0, (2, 2, 6, 6)).astype(np.float32)
    w = rng.normal(0.0, 0.5, (3, 2, 3, 3)).astype(np.float32)
    bias = rng.normal(0.0, 0.5, 3).astype(np.float32)
    gain = np.ones(6, dtype=np.float32)
    beta = np.zeros(6, dtype=np.float32)
    probs = rng.dirichlet(np.ones(6), size=(4,)).astype(np.float32)
    target = np.eye(6, dtype=np.float32)[rng.integers(0, 6, 4)]
    safe = a.copy()
    safe[np.abs(np.abs(safe) - 0.5) < 0.01] += 0.05

    cases = [
        ("add", lambda t, u: (t + u).sum(), (a, c)),
        ("sub", lambda t, u: (t - u).mean(), (a, b)),
        ("mul", lambda t, u: (t * u).sum(), (a, c)),
        ("neg", lambda t: (-t).sum(), (a,)),
        ("matmul", lambda t, u: ad.matmul(t, u).sum(), (a, c)),
        ("reshape", lambda t: ad.mul(ad.reshape(t, (6, 18)), 2.0).sum(), (a,)),
        ("transpose", lambda t: ad.mul(ad.transpose(t, (2, 0, 1)), 0.5).sum(), (a,)),
        ("concat", lambda t, u: ad.mul(ad.concat([t, u], axis=1), 1.5).mean(), (a, b)),
        ("slice", lambda t: t[1:3, :, 2:5].sum(), (a,)),
        ("softmax", lambda t: ad.mul(ad.softmax(t), c).sum(), (a,)),
        ("sigmoid", lambda t: ad.sigmoid(t).mean(), (a,)),
        ("gelu", lambda t: ad.gelu(t).mean(), (a,)),
        ("log", lambda t: ad.log(t).mean(), (np.abs(a) + 0.5,)),
        ("clip", lambda t: ad.clip(t, -0.5, 0.5).sum(), (safe,)),
        ("layer_norm", lambda t, g_, b_: ad.mul(ad.layer_norm(t, g_, b_), c).sum(),
         (a, gain, beta)),
        ("conv2d", lambda t, u, v: ad.conv2d(t, u, v).mean(), (x, w, bias)),
        ("avgpool2", lambda t: ad.mul(ad.avgpool2(t), 3.0).sum(), (a,)),
        ("sum", lambda t: t.sum(), (a,)),
        ("mean", lambda t: t.mean(), (a,)),
        ("mse", lambda t, u: ad.mse(t, u), (a, b)),
        ("cross_entropy", lambda p: ad.cross_entropy(p, target), (probs,)),
    ]
    worst = 0.0
    for name, fn, arrays in cases:
        tensors = [ad.Tensor(arr, requires_grad=True) for arr in arrays]
        report = ad.grad_check(fn, tensors)
        status = "ok" if report.max_rel_error < tol else "FAIL"
        print(f"{status:4s} {name}: {report.max_rel_error:.3e}")
        worst = max(worst, report.max_rel_error)
    return worst


def cli_dispatch(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help paths
        return 0 if exc.code in (0, None) else 1
    if args.command is None:
        parser.print_help()
        return 1
    try:
        return _run(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
