"""Training loops, inference, test-time refinement, and evaluation.

Modes:
  train_srn      renderer on (one-hot grid, explicit render) pairs
  pretrain_spn   parameterizer through the frozen renderer, image loss only
  finetune_spn   parameterizer with matched token cross-entropy
  train_semi     alternating render-supervised and labeled batches
  zero_shot_infer / test_time_optimize / evaluate

All loops are deterministic given (config, corpus): batch order comes from
named PCG64 streams, numpy runs single-threaded arithmetic, and parameters
update in a fixed order.
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatchError, Tape, Tensor, adam_step, backward
from .datasets import parse_dataset
from .matching import Assignment, chamfer_sentinel, cost_matrix, hungarian, metric_acc, metric_chamfer, metric_img_mse, metric_param_mse
from .nets import (
    ParameterizerConfig,
    RendererConfig,
    SketchParameterizer,
    SketchRenderer,
    image_loss,
    load_checkpoint,
    multiscale_l2,
    permuted_target_probs,
    save_checkpoint,
    spn_forward,
    srn_forward,
)
from .primitives import PARAM_COUNT, Sketch
from .raster import rasterize, read_pgm
from .synthgen import GeneratorConfig, rng_stream, sample_sketch
from .tokens import (
    CONSTRUCTION,
    GRID_TOKENS,
    NON_CONSTRUCTION,
    PARAM_BASE,
    PARAM_MAX,
    SLOT_COUNT,
    TOKENS_PER_SLOT,
    TYPE_TOKENS,
    TokenGrid,
    detokenize,
    one_hot,
    tokenize,
)

# spawn-key tags for the named PRNG streams; labeled/unlabeled tags are
# shared across modes so degenerate semi-supervised runs replay exactly
_STREAM_LABELED = 10
_STREAM_UNLABELED = 11
_STREAM_SRN = 12


class CheckpointMismatchError(RuntimeError):
    pass


@dataclass
class RunConfig:
    """One experiment's knobs; serializes to/from JSON for the CLI."""

    mode: str = ""
    data_dir: str | None = None
    out_dir: str | None = None
    srn_checkpoint: str | None = None
    spn_checkpoint: str | None = None
    image_size: int = 64
    model_size: str = "desk"  # "desk" or "full"
    loss: str = "multiscale_l2"
    learning_rate: float = 1e-4
    batch_size: int = 16
    epochs: int = 10
    steps: int | None = None  # optional hard cap across epochs
    seed: int = 0
    input_style: str = "precise"  # "precise" or "handdrawn"
    type_quota: dict | None = None
    lambda_render: float = 1.0
    lambda_param: float = 1.0
    tto_steps: int = 100
    tto_lr: float = 0.05
    generator: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if min(self.lambda_render, self.lambda_param) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.input_style not in ("precise", "handdrawn"):
            raise ValueError(f"unknown input style {self.input_style!r}")

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(**json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    def renderer_config(self) -> RendererConfig:
        if self.model_size == "full":
            return RendererConfig.full(self.image_size)
        return RendererConfig.desk(self.image_size)

    def parameterizer_config(self) -> ParameterizerConfig:
        if self.model_size == "full":
            return ParameterizerConfig.full(self.image_size)
        return ParameterizerConfig.desk(self.image_size)

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(**{"seed": self.seed, **self.generator})


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).parent,
            capture_output=True,
            text=True,
            timeout=10,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def write_manifest(out_dir, payload: dict) -> None:
    """Config + seed + source version next to run outputs (no timestamps, so
    reruns stay byte-identical)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = dict(payload)
    manifest["git"] = git_describe()
    with (out_dir / "manifest.json").open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# corpus access
# ---------------------------------------------------------------------------

@dataclass
class CorpusSplit:
    sketches: list[Sketch]
    grids: list[TokenGrid]
    onehots: np.ndarray  # (N, 128, 73)
    images: np.ndarray  # (N, S, S)

    def __len__(self):
        return len(self.sketches)


def load_split(data_dir, split: str, image_size: int,
               input_style: str = "precise") -> CorpusSplit:
    """Load one corpus split; images come from the PGM files when present
    (mandatory for hand-drawn input), else from explicit re-rasterization."""
    data_dir = Path(data_dir)
    sketches = parse_dataset(data_dir / f"{split}.jsonl")
    grids = [tokenize(s) for s in sketches]
    onehots = (
        np.stack([one_hot(g) for g in grids])
        if sketches
        else np.zeros((0, GRID_TOKENS, 73), dtype=np.float32)
    )
    sub = "images_hd" if input_style == "handdrawn" else "images"
    img_dir = data_dir / sub / split
    images = []
    for i, sketch in enumerate(sketches):
        pgm = img_dir / f"{i:06d}.pgm"
        if pgm.exists():
            img = read_pgm(pgm)
            if img.shape != (image_size, image_size):
                raise ValueError(
                    f"{pgm}: expected {image_size}x{image_size}, got {img.shape}"
                )
            images.append(img)
        elif input_style == "precise":
            images.append(rasterize(sketch, image_size, image_size))
        else:
            raise FileNotFoundError(f"hand-drawn render missing: {pgm}")
    stacked = (
        np.stack(images)
        if images
        else np.zeros((0, image_size, image_size), dtype=np.float32)
    )
    return CorpusSplit(sketches, grids, onehots, stacked)


def _epoch_batches(n: int, batch_size: int, seed: int, tag: int, epoch: int):
    """Deterministic shuffled batch index arrays for one epoch."""
    order = rng_stream(seed, tag, epoch).permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


@dataclass
class TrainResult:
    final_loss: float
    epoch_losses: list[float]
    checkpoint_path: str | None = None
    batch_log: list[dict] = field(default_factory=list)


def _maybe_save(store, cfg: RunConfig, default_name: str) -> str | None:
    if cfg.out_dir is None:
        return None
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / default_name
    save_checkpoint(store, path)
    return str(path)


# ---------------------------------------------------------------------------
# renderer training
# ---------------------------------------------------------------------------

def train_srn(cfg: RunConfig, log=None) -> TrainResult:
    """Train the renderer on (one-hot grid, explicit render) pairs.

    With a data_dir the frozen train split is iterated for cfg.epochs;
    without one, fresh synthetic batches stream from the generator and
    cfg.steps bounds the run. The image loss kind follows cfg.loss.
    """
    model = SketchRenderer(cfg.renderer_config(), seed=cfg.seed)
    size = cfg.image_size
    epoch_losses: list[float] = []
    step = 0
    if cfg.data_dir is not None:
        split = load_split(cfg.data_dir, "train", size)
        for epoch in range(cfg.epochs):
            losses = []
            for idx in _epoch_batches(len(split), cfg.batch_size, cfg.seed,
                                      _STREAM_SRN, epoch):
                if cfg.steps is not None and step >= cfg.steps:
                    break
                losses.append(_srn_step(model, split.onehots[idx],
                                         split.images[idx], cfg))
                step += 1
            if losses:
                epoch_losses.append(float(np.mean(losses)))
                if log:
                    log(f"srn epoch {epoch}: loss {epoch_losses[-1]:.5f}")
            if cfg.steps is not None and step >= cfg.steps:
                break
    else:
        if cfg.steps is None:
            raise ValueError("streaming train_srn needs cfg.steps")
        gen = cfg.generator_config()
        rng = rng_stream(cfg.seed, _STREAM_SRN)
        chunk = []
        for step in range(cfg.steps):
            pairs = [sample_sketch(gen, rng) for _ in range(cfg.batch_size)]
            tokens = np.stack([one_hot(g) for g, _ in pairs])
            targets = np.stack([rasterize(s, size, size) for _, s in pairs])
            chunk.append(_srn_step(model, tokens, targets, cfg))
            if len(chunk) == 100 or step == cfg.steps - 1:
                epoch_losses.append(float(np.mean(chunk)))
                if log:
                    log(f"srn step {step + 1}: loss {epoch_losses[-1]:.5f}")
                chunk = []
    path = _maybe_save(model.store, cfg, "srn.ckpt")
    return TrainResult(epoch_losses[-1] if epoch_losses else float("nan"),
                       epoch_losses, path)


def _srn_step(model, tokens, targets, cfg) -> float:
    with Tape():
        out = srn_forward(model, tokens)
        loss = image_loss(out, targets, cfg.loss)
    backward(loss)
    adam_step(model.store, lr=cfg.learning_rate)
    return float(loss.data)


# ---------------------------------------------------------------------------
# rendering-supervised pretraining
# ---------------------------------------------------------------------------

def _load_renderer(cfg: RunConfig, path) -> SketchRenderer:
    try:
        return SketchRenderer.from_checkpoint(cfg.renderer_config(), path)
    except ShapeMismatchError as exc:
        raise CheckpointMismatchError(f"renderer checkpoint {path}: {exc}") from exc


def _load_parameterizer(cfg: RunConfig, path) -> SketchParameterizer:
    try:
        return SketchParameterizer.from_checkpoint(cfg.parameterizer_config(), path)
    except ShapeMismatchError as exc:
        raise CheckpointMismatchError(
            f"parameterizer checkpoint {path}: {exc}"
        ) from exc


def pretrain_spn(cfg: RunConfig, srn_checkpoint, log=None) -> TrainResult:
    """Pretrain the parameterizer with the rendering loss only.

    The renderer loads frozen; its parameter bytes are asserted identical
    before and after. Each step: predict token probabilities, render them,
    compare against the input image at five scales, update the
    parameterizer.
    """
    renderer = _load_renderer(cfg, srn_checkpoint)
    renderer.store.freeze()
    frozen = renderer.store.state_bytes()
    model = SketchParameterizer(cfg.parameterizer_config(), seed=cfg.seed)
    split = load_split(cfg.data_dir, "train", cfg.image_size, cfg.input_style)
    epoch_losses = []
    step = 0
    for epoch in range(cfg.epochs):
        losses = []
        for idx in _epoch_batches(len(split), cfg.batch_size, cfg.seed,
                                  _STREAM_UNLABELED, epoch):
            if cfg.steps is not None and step >= cfg.steps:
                break
            losses.append(_render_step(model, renderer, split.images[idx], cfg, 1.0))
            step += 1
        if losses:
            epoch_losses.append(float(np.mean(losses)))
            if log:
                log(f"pretrain epoch {epoch}: loss {epoch_losses[-1]:.5f}")
        if cfg.steps is not None and step >= cfg.steps:
            break
    if renderer.store.state_bytes() != frozen:
        raise RuntimeError("frozen renderer parameters changed during pretraining")
    path = _maybe_save(model.store, cfg, "spn_pretrained.ckpt")
    return TrainResult(epoch_losses[-1] if epoch_losses else float("nan"),
                       epoch_losses, path)


def _render_step(model, renderer, images, cfg, weight: float) -> float:
    with Tape():
        probs = spn_forward(model, images)
        rendered = srn_forward(renderer, probs)
        loss = ad.mul(multiscale_l2(rendered, images), weight)
    backward(loss)
    adam_step(model.store, lr=cfg.learning_rate)
    return float(loss.data)


# ---------------------------------------------------------------------------
# matched parametric fine-tuning
# ---------------------------------------------------------------------------

def _matched_targets(probs_data: np.ndarray, grids) -> tuple[np.ndarray, float, float]:
    """Per-sample optimal assignment; returns (stacked permuted one-hot
    targets, matched cost, identity cost) for the batch."""
    targets = []
    matched = 0.0
    identity = 0.0
    for p, grid in zip(probs_data, grids):
        cm = cost_matrix(p, grid)
        assignment = hungarian(cm)
        matched += assignment.cost
        identity += float(np.trace(cm))
        targets.append(permuted_target_probs(grid, assignment.permutation))
    return np.stack(targets), matched, identity


def finetune_spn(cfg: RunConfig, spn_checkpoint, labeled_dir=None,
                 log=None) -> TrainResult:
    """Fine-tune (or train from scratch when spn_checkpoint is None) with
    token cross-entropy under the optimal slot assignment.

    Every batch checks the matching invariant: matched cost never exceeds
    the identity-assignment cost.
    """
    if spn_checkpoint is None:
        model = SketchParameterizer(cfg.parameterizer_config(), seed=cfg.seed)
    else:
        model = _load_parameterizer(cfg, spn_checkpoint)
    split = load_split(labeled_dir or cfg.data_dir, "train", cfg.image_size,
                       cfg.input_style)
    epoch_losses = []
    batch_log = []
    step = 0
    for epoch in range(cfg.epochs):
        losses = []
        for idx in _epoch_batches(len(split), cfg.batch_size, cfg.seed,
                                  _STREAM_LABELED, epoch):
            if cfg.steps is not None and step >= cfg.steps:
                break
            grids = [split.grids[i] for i in idx]
            value, matched, identity = _parametric_step(
                model, split.images[idx], grids, cfg, 1.0
            )
            losses.append(value)
            batch_log.append({"matched_cost": matched, "identity_cost": identity})
            step += 1
        if losses:
            epoch_losses.append(float(np.mean(losses)))
            if log:
                log(f"finetune epoch {epoch}: loss {epoch_losses[-1]:.5f}")
        if cfg.steps is not None and step >= cfg.steps:
            break
    path = _maybe_save(model.store, cfg, "spn_finetuned.ckpt")
    return TrainResult(epoch_losses[-1] if epoch_losses else float("nan"),
                       epoch_losses, path, batch_log)


def _parametric_step(model, images, grids, cfg, weight: float):
    with Tape():
        probs = spn_forward(model, images)
        targets, matched, identity = _matched_targets(probs.data, grids)
        if matched > identity + 1e-6:
            raise AssertionError(
                f"matched cost {matched} exceeds identity cost {identity}"
            )
        loss = ad.mul(ad.cross_entropy(probs, targets), weight)
    backward(loss)
    adam_step(model.store, lr=cfg.learning_rate)
    return float(loss.data), matched, identity


# ---------------------------------------------------------------------------
# semi-supervised training
# ---------------------------------------------------------------------------

def train_semi(cfg: RunConfig, labeled_dir, unlabeled_dir, srn_checkpoint,
               log=None) -> TrainResult:
    """Alternate one labeled batch (weighted cross-entropy) with one
    render-supervised batch (weighted multiscale loss).

    A zero weight skips its phase entirely, so lambda_render=0 replays
    finetune_spn and lambda_param=0 replays pretrain_spn bit-for-bit under
    the same batch schedule.
    """
    renderer = None
    frozen = None
    if cfg.lambda_render > 0:
        renderer = _load_renderer(cfg, srn_checkpoint)
        renderer.store.freeze()
        frozen = renderer.store.state_bytes()
    if cfg.spn_checkpoint:
        model = _load_parameterizer(cfg, cfg.spn_checkpoint)
    else:
        model = SketchParameterizer(cfg.parameterizer_config(), seed=cfg.seed)
    labeled = load_split(labeled_dir, "train", cfg.image_size, cfg.input_style)
    unlabeled = load_split(unlabeled_dir, "train", cfg.image_size, cfg.input_style)
    epoch_losses = []
    for epoch in range(cfg.epochs):
        losses = []
        lab_iter = _epoch_batches(len(labeled), cfg.batch_size, cfg.seed,
                                  _STREAM_LABELED, epoch)
        unl_iter = _epoch_batches(len(unlabeled), cfg.batch_size, cfg.seed,
                                  _STREAM_UNLABELED, epoch)
        while True:
            lab_idx = next(lab_iter, None) if cfg.lambda_param > 0 else None
            unl_idx = next(unl_iter, None) if cfg.lambda_render > 0 else None
            if lab_idx is None and unl_idx is None:
                break
            if lab_idx is not None:
                grids = [labeled.grids[i] for i in lab_idx]
                value, _, _ = _parametric_step(
                    model, labeled.images[lab_idx], grids, cfg, cfg.lambda_param
                )
                losses.append(value)
            if unl_idx is not None:
                losses.append(_render_step(model, renderer,
                                           unlabeled.images[unl_idx], cfg,
                                           cfg.lambda_render))
        if losses:
            epoch_losses.append(float(np.mean(losses)))
            if log:
                log(f"semi epoch {epoch}: loss {epoch_losses[-1]:.5f}")
    if frozen is not None and renderer.store.state_bytes() != frozen:
        raise RuntimeError("frozen renderer parameters changed during training")
    path = _maybe_save(model.store, cfg, "spn_semi.ckpt")
    return TrainResult(epoch_losses[-1] if epoch_losses else float("nan"),
                       epoch_losses, path)


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

_KIND_PARAM_SLOTS = {kind: PARAM_COUNT[kind] for kind in PARAM_COUNT}


@dataclass
class InferenceResult:
    sketch: Sketch
    grid: TokenGrid
    probs: np.ndarray
    slot_report: list[str]


def _constrained_slot(slot_probs: np.ndarray, kind: str | None) -> np.ndarray:
    """Most likely syntactically valid slot for a forced kind (None=empty)."""
    tokens = np.zeros(TOKENS_PER_SLOT, dtype=np.int64)
    if kind is None:
        return tokens
    n_params = _KIND_PARAM_SLOTS[kind]
    tokens[0] = TYPE_TOKENS[kind]
    for j in range(1, 1 + n_params):
        window = slot_probs[j, PARAM_BASE : PARAM_MAX + 1]
        tokens[j] = PARAM_BASE + int(np.argmax(window))
    flag_pos = 1 + n_params
    flag_probs = slot_probs[flag_pos, [CONSTRUCTION, NON_CONSTRUCTION]]
    tokens[flag_pos] = CONSTRUCTION if flag_probs[0] >= flag_probs[1] else NON_CONSTRUCTION
    return tokens


def grid_from_probs(probs: np.ndarray, type_quota: dict | None = None) -> TokenGrid:
    """Argmax decode of (128, 73) probabilities into a token grid.

    With a type quota (kind -> slot count, total <= 16), slots are assigned
    to required kinds by minimum-cost matching on the type-token
    probabilities, remaining slots are forced empty, and parameter /
    construction positions argmax within their valid token ranges.
    """
    probs = np.asarray(probs)
    if type_quota is None:
        flat = probs.argmax(axis=-1).astype(np.int64)
        return TokenGrid(flat.reshape(SLOT_COUNT, TOKENS_PER_SLOT))
    required: list[str | None] = []
    for kind, count in sorted(type_quota.items()):
        if kind not in TYPE_TOKENS:
            raise ValueError(f"unknown primitive kind in quota: {kind!r}")
        required.extend([kind] * int(count))
    if len(required) > SLOT_COUNT:
        raise ValueError(f"quota requests {len(required)} primitives > {SLOT_COUNT}")
    required.extend([None] * (SLOT_COUNT - len(required)))
    slot_probs = probs.reshape(SLOT_COUNT, TOKENS_PER_SLOT, -1)
    type_p = slot_probs[:, 0, :]  # (slot, vocab)
    cost = np.zeros((SLOT_COUNT, SLOT_COUNT))
    for r, kind in enumerate(required):
        token = TYPE_TOKENS[kind] if kind is not None else 0
        cost[:, r] = -np.log(np.maximum(type_p[:, token], 1e-9))
    assignment = hungarian(cost)  # requirement assigned to each slot
    slots = np.zeros((SLOT_COUNT, TOKENS_PER_SLOT), dtype=np.int64)
    for s in range(SLOT_COUNT):
        slots[s] = _constrained_slot(slot_probs[s], required[assignment.permutation[s]])
    return TokenGrid(slots)


def zero_shot_infer(model: SketchParameterizer, image,
                    type_quota: dict | None = None) -> InferenceResult:
    """Predict a sketch from one image; invalid slots drop in decoding."""
    probs = spn_forward(model, image).data
    grid = grid_from_probs(probs, type_quota)
    sketch, report = detokenize(grid)
    return InferenceResult(sketch, grid, probs, report)


@dataclass
class RefineResult:
    sketch: Sketch
    grid: TokenGrid
    trace: list[float]
    initial_loss: float
    final_loss: float


def test_time_optimize(spn: SketchParameterizer, srn: SketchRenderer, image,
                       steps: int = 100, lr: float = 0.05) -> RefineResult:
    """Refine per-slot token logits by gradient descent through the frozen
    renderer; both networks' weights are frozen by this call and never step.

    With steps=0 the result is exactly the plain argmax inference.
    """
    spn.store.freeze()
    srn.store.freeze()
    image = np.asarray(image, dtype=np.float32)
    probs0 = spn_forward(spn, image).data
    logits = Tensor(np.log(np.maximum(probs0, 1e-9)), requires_grad=True)
    trace = []
    for _ in range(steps):
        with Tape():
            y = ad.softmax(logits)
            rendered = srn_forward(srn, y)
            loss = multiscale_l2(rendered, image)
        backward(loss)
        trace.append(float(loss.data))
        logits.data -= lr * logits.grad
        logits.grad[...] = 0.0
    final_probs = ad.softmax(Tensor(logits.data)).data
    if steps > 0:
        rendered = srn_forward(srn, final_probs)
        trace.append(float(multiscale_l2(rendered, image).data))
    grid = grid_from_probs(final_probs)
    sketch, _ = detokenize(grid)
    initial = trace[0] if trace else float("nan")
    final = trace[-1] if trace else float("nan")
    return RefineResult(sketch, grid, trace, initial, final)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate(model: SketchParameterizer, data_dir, split: str = "test",
             out_path=None, image_size: int | None = None,
             input_style: str = "precise", type_quota: dict | None = None,
             predictor=None, batch_size: int = 32) -> dict:
    """Per-sample metrics plus aggregate means, optionally written as JSON.

    Prediction slots are matched to ground truth by minimum-cost assignment
    on the token probabilities; image metrics compare explicit re-renders of
    the predicted sketch against explicit renders of the ground truth.
    `predictor` overrides the model's forward (maps image batch to
    probability batch) so oracle inputs can be scored with the same path.
    """
    size = image_size or model.cfg.image_size
    corpus = load_split(data_dir, split, size, input_style)
    if predictor is None:
        predictor = lambda imgs: spn_forward(model, imgs).data
    samples = []
    for start in range(0, len(corpus), batch_size):
        idx = range(start, min(start + batch_size, len(corpus)))
        probs_batch = predictor(corpus.images[list(idx)])
        for j, i in enumerate(idx):
            probs = probs_batch[j]
            gt_grid = corpus.grids[i]
            assignment = hungarian(cost_matrix(probs, gt_grid))
            pred_grid = grid_from_probs(probs, type_quota)
            pred_sketch, _ = detokenize(pred_grid)
            pred_img = rasterize(pred_sketch, size, size)
            gt_img = rasterize(corpus.sketches[i], size, size)
            cd = metric_chamfer(pred_img, gt_img)
            samples.append({
                "index": i,
                "acc": metric_acc(pred_grid, gt_grid, assignment),
                "param_mse": metric_param_mse(pred_grid, gt_grid, assignment),
                "img_mse": metric_img_mse(pred_img, gt_img),
                "chamfer": cd,
                "empty_prediction": bool(pred_img.max() <= 0.5),
                "matched_cost": assignment.cost,
            })
    aggregate = {
        key: float(np.mean([s[key] for s in samples])) if samples else 0.0
        for key in ("acc", "param_mse", "img_mse", "chamfer")
    }
    report = {
        "split": split,
        "count": len(samples),
        "input_style": input_style,
        "image_size": size,
        "chamfer_sentinel": chamfer_sentinel((size, size)),
        "aggregate": aggregate,
        "samples": samples,
    }
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        with out_path.open("w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report
