"""Seeded random generation of valid token grids with paired sketches, plus
desk-scale corpus building (JSONL splits + PGM renders + manifest).

Parameters are sampled directly on the 64-bin quantization grid so that the
returned sketch re-tokenizes to exactly the returned grid: rendering
supervision pairs carry no quantization noise.

Randomness uses numpy's PCG64 seeded through SeedSequence; independent
streams are derived with spawn keys, so split contents never overlap.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .datasets import serialize_dataset
from .primitives import Primitive, Sketch
from .raster import HanddrawConfig, rasterize, synthesize_handdrawn, write_pgm
from .tokens import BIN_COUNT, TokenGrid, dequantize, tokenize

MAX_CONSECUTIVE_REJECTIONS = 1000


class RejectionOverflowError(RuntimeError):
    """Raised when degenerate-sample rejection never terminates."""


@dataclass(frozen=True)
class GeneratorConfig:
    min_primitives: int = 6
    max_primitives: int = 16
    line_weight: float = 0.55
    arc_weight: float = 0.20
    circle_weight: float = 0.15
    point_weight: float = 0.10
    construction_probability: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.min_primitives <= self.max_primitives <= 16:
            raise ValueError("primitive count range must lie within [1, 16]")
        total = (self.line_weight + self.arc_weight + self.circle_weight
                 + self.point_weight)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"type weights must sum to 1, got {total}")
        if not 0.0 <= self.construction_probability <= 1.0:
            raise ValueError("construction_probability must lie in [0, 1]")

    @property
    def weights(self):
        return (self.line_weight, self.arc_weight, self.circle_weight,
                self.point_weight)


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent deterministic PCG64 stream for (seed, key)."""
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(seed, spawn_key=key)))


_KIND_ORDER = ("line", "arc", "circle", "point")
_BINS_PER_KIND = {"line": 4, "arc": 6, "circle": 3, "point": 2}


def _sample_primitive(cfg: GeneratorConfig, rng) -> Primitive:
    rejections = 0
    while True:
        kind = _KIND_ORDER[rng.choice(4, p=cfg.weights)]
        bins = rng.integers(0, BIN_COUNT, size=_BINS_PER_KIND[kind])
        ok = True
        if kind == "line":
            ok = not (bins[0] == bins[2] and bins[1] == bins[3])
        elif kind == "arc":
            pts = {(bins[0], bins[1]), (bins[2], bins[3]), (bins[4], bins[5])}
            ok = len(pts) == 3
        elif kind == "circle":
            cx, cy, r = (dequantize(int(b)) for b in bins)
            # radius must be positive and the full circle must stay on-canvas
            ok = bins[2] > 0 and min(cx - r, cy - r) >= 0.0 and max(cx + r, cy + r) <= 1.0
        if ok:
            values = tuple(dequantize(int(b)) for b in bins)
            construction = bool(rng.random() < cfg.construction_probability)
            return Primitive(kind, values, construction)
        rejections += 1
        if rejections >= MAX_CONSECUTIVE_REJECTIONS:
            raise RejectionOverflowError(
                f"{rejections} consecutive degenerate samples; "
                "generator config is too restrictive"
            )


def sample_sketch(cfg: GeneratorConfig, rng) -> tuple[TokenGrid, Sketch]:
    """Draw one valid sketch; tokenize(sketch) equals the returned grid."""
    count = int(rng.integers(cfg.min_primitives, cfg.max_primitives + 1))
    prims = tuple(_sample_primitive(cfg, rng) for _ in range(count))
    sketch = Sketch(prims)
    return tokenize(sketch), sketch


def sample_many(cfg: GeneratorConfig, n: int, stream: int = 0):
    """n deterministic samples from the given stream index."""
    rng = rng_stream(cfg.seed, stream)
    return [sample_sketch(cfg, rng) for _ in range(n)]


SPLIT_STREAMS = {"train": 0, "val": 1, "test": 2}
# spawn-key space reserved for per-image hand-drawn noise streams
_HANDDRAWN_STREAM_BASE = 1000


def build_corpus(
    cfg: GeneratorConfig,
    n_train: int,
    n_val: int,
    n_test: int,
    out_dir,
    image_size: int = 128,
    handdrawn: HanddrawConfig | None = None,
) -> dict:
    """Write {train,val,test}.jsonl plus paired PGM renders and a manifest.

    Output bytes are a pure function of (cfg, sizes, image_size, handdrawn).
    Returns the manifest dict, also written as manifest.json.
    """
    out_dir = Path(out_dir)
    sizes = {"train": n_train, "val": n_val, "test": n_test}
    if min(sizes.values()) < 0:
        raise ValueError("split sizes must be non-negative")
    counts = {}
    for split, n in sizes.items():
        samples = sample_many(cfg, n, SPLIT_STREAMS[split])
        serialize_dataset([s for _, s in samples], _split_path(out_dir, split))
        img_dir = out_dir / "images" / split
        img_dir.mkdir(parents=True, exist_ok=True)
        for i, (_, sketch) in enumerate(samples):
            write_pgm(rasterize(sketch, image_size, image_size),
                      img_dir / f"{i:06d}.pgm")
        if handdrawn is not None:
            hd_dir = out_dir / "images_hd" / split
            hd_dir.mkdir(parents=True, exist_ok=True)
            for i, (_, sketch) in enumerate(samples):
                hd_seed = np.random.SeedSequence(
                    handdrawn.seed,
                    spawn_key=(_HANDDRAWN_STREAM_BASE + SPLIT_STREAMS[split], i),
                ).generate_state(1)[0]
                per_image = HanddrawConfig(
                    translation_sigma=handdrawn.translation_sigma,
                    rotation_sigma_deg=handdrawn.rotation_sigma_deg,
                    gp_lengthscale=handdrawn.gp_lengthscale,
                    gp_amplitude=handdrawn.gp_amplitude,
                    points_per_stroke=handdrawn.points_per_stroke,
                    seed=int(hd_seed),
                )
                write_pgm(
                    synthesize_handdrawn(sketch, per_image, image_size, image_size),
                    hd_dir / f"{i:06d}.pgm",
                )
        counts[split] = n
    manifest = {
        "seed": cfg.seed,
        "generator": asdict(cfg),
        "counts": counts,
        "image_size": image_size,
        "handdrawn": asdict(handdrawn) if handdrawn is not None else None,
    }
    with (out_dir / "manifest.json").open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _split_path(out_dir: Path, split: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir / f"{split}.jsonl"
