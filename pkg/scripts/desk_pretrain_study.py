"""Paired pretraining-benefit study at desk scale.

Builds a synthetic corpus, trains the renderer, pretrains one parameterizer
through it with the rendering loss, then fine-tunes that model and a
from-scratch twin on the same small labeled set. Reports validation chamfer
distance for all four cells (pretrained/scratch x zero-shot/fine-tuned).

Run from the repository root:
    python scripts/desk_pretrain_study.py --out runs/study --seed 7
"""

import argparse
import json
import time
from pathlib import Path

from sketchparam.nets import SketchParameterizer, load_checkpoint
from sketchparam.pipeline import (
    RunConfig,
    evaluate,
    finetune_spn,
    pretrain_spn,
    train_srn,
    write_manifest,
)
from sketchparam.synthgen import GeneratorConfig, build_corpus

ZERO_SHOT_QUOTA = {"line": 6, "arc": 2, "circle": 2, "point": 1}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--train", type=int, default=1000)
    ap.add_argument("--val", type=int, default=200)
    ap.add_argument("--labels", type=int, default=200)
    ap.add_argument("--image-size", type=int, default=64)
    ap.add_argument("--srn-steps", type=int, default=3000)
    ap.add_argument("--pretrain-epochs", type=int, default=8)
    ap.add_argument("--finetune-epochs", type=int, default=30)
    ap.add_argument("--lr", type=float, default=1e-3)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()

    corpus = out / "corpus"
    build_corpus(GeneratorConfig(seed=args.seed), args.train, args.val, 0,
                 corpus, image_size=args.image_size)
    # the labeled set reuses the head of the train split; images re-rasterize
    labeled = out / "labeled"
    labeled.mkdir(exist_ok=True)
    lines = (corpus / "train.jsonl").read_text().splitlines()[: args.labels]
    (labeled / "train.jsonl").write_text("\n".join(lines) + "\n")
    print(f"corpus ready ({time.time() - t0:.0f}s)")

    base = dict(data_dir=str(corpus), image_size=args.image_size,
                learning_rate=args.lr, batch_size=16, seed=args.seed)
    srn = train_srn(RunConfig(**base, out_dir=str(out / "srn"), data_dir=None,
                              steps=args.srn_steps, epochs=1), log=print)
    print(f"renderer trained, final loss {srn.final_loss:.5f}")

    pre = pretrain_spn(RunConfig(**base, out_dir=str(out / "pre"),
                                 epochs=args.pretrain_epochs),
                       srn.checkpoint_path, log=print)
    print(f"pretrained, final loss {pre.final_loss:.5f}")

    ft_cfg = dict(base, data_dir=str(labeled), epochs=args.finetune_epochs)
    ft_pre = finetune_spn(RunConfig(**ft_cfg, out_dir=str(out / "ft_pre")),
                          pre.checkpoint_path, log=print)
    ft_scratch = finetune_spn(RunConfig(**ft_cfg, out_dir=str(out / "ft_scratch")),
                              None, log=print)

    cfg = RunConfig(**base)
    cells = {
        "pretrained_zero_shot": (pre.checkpoint_path, ZERO_SHOT_QUOTA),
        "scratch_zero_shot": (None, ZERO_SHOT_QUOTA),
        "pretrained_finetuned": (ft_pre.checkpoint_path, None),
        "scratch_finetuned": (ft_scratch.checkpoint_path, None),
    }
    results = {}
    for name, (ckpt, quota) in cells.items():
        if ckpt is None:
            model = SketchParameterizer(cfg.parameterizer_config(), seed=args.seed)
        else:
            model = SketchParameterizer(cfg.parameterizer_config(),
                                        store=load_checkpoint(ckpt))
        report = evaluate(model, corpus, split="val", type_quota=quota,
                          out_path=out / f"eval_{name}.json")
        results[name] = report["aggregate"]
        print(f"{name}: {json.dumps(report['aggregate'])}")

    summary = {
        "results": results,
        "zero_shot_benefit": results["scratch_zero_shot"]["chamfer"]
        - results["pretrained_zero_shot"]["chamfer"],
        "finetuned_benefit": results["scratch_finetuned"]["chamfer"]
        - results["pretrained_finetuned"]["chamfer"],
        "minutes": (time.time() - t0) / 60,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    write_manifest(out, {"command": "desk_pretrain_study",
                         "args": vars(args)})
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
