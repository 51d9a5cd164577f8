"""Test-time refinement demo: descend the rendering loss on token logits for
a few held-out images and print the per-step trace plus chamfer deltas.

    python scripts/refine_demo.py --spn runs/ft/spn_finetuned.ckpt \
        --srn runs/srn/srn.ckpt --data runs/study/corpus --count 5
"""

import argparse

import numpy as np

from sketchparam.matching import metric_chamfer
from sketchparam.nets import SketchParameterizer, SketchRenderer
from sketchparam.pipeline import RunConfig, load_split, test_time_optimize, zero_shot_infer
from sketchparam.raster import rasterize


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--spn", required=True)
    ap.add_argument("--srn", required=True)
    ap.add_argument("--data", required=True, help="corpus directory")
    ap.add_argument("--split", default="val")
    ap.add_argument("--count", type=int, default=5)
    ap.add_argument("--steps", type=int, default=100)
    ap.add_argument("--lr", type=float, default=0.05)
    ap.add_argument("--image-size", type=int, default=64)
    args = ap.parse_args()

    cfg = RunConfig(image_size=args.image_size)
    spn = SketchParameterizer.from_checkpoint(cfg.parameterizer_config(), args.spn)
    srn = SketchRenderer.from_checkpoint(cfg.renderer_config(), args.srn)
    corpus = load_split(args.data, args.split, args.image_size)

    for i in range(min(args.count, len(corpus))):
        image = corpus.images[i]
        target = rasterize(corpus.sketches[i], args.image_size, args.image_size)
        before = zero_shot_infer(spn, image)
        cd_before = metric_chamfer(
            rasterize(before.sketch, args.image_size, args.image_size), target)
        refined = test_time_optimize(spn, srn, image, args.steps, args.lr)
        cd_after = metric_chamfer(
            rasterize(refined.sketch, args.image_size, args.image_size), target)
        marks = [f"{v:.4f}" for v in refined.trace[:: max(1, args.steps // 5)]]
        print(f"[{i}] loss {refined.initial_loss:.4f} -> {refined.final_loss:.4f} "
              f"(trace {' '.join(marks)}) | chamfer {cd_before:.2f} -> {cd_after:.2f} "
              f"| primitives {len(before.sketch)} -> {len(refined.sketch)}")


if __name__ == "__main__":
    main()
