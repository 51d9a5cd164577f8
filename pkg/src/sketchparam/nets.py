"""The two networks and their losses.

* SketchRenderer ("srn"): token probabilities -> image. A transformer
  encoder over the 128 token embeddings, decoded by learnable patch queries
  into sigmoid pixel patches that tile the output image row-major.
* SketchParameterizer ("spn"): image -> token probabilities. A small
  convolutional stack at full resolution, patch-embedded into a transformer
  encoder, decoded by 128 learnable token queries classified independently
  over the 73-symbol vocabulary with softmax.

Both operate batched (leading axis optional) and are built on the autodiff
substrate, so every forward is differentiable w.r.t. inputs and weights.
Checkpoints are a little-endian binary format with magic "PCSO".
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, ShapeMismatchError, Tensor
from .tokens import GRID_TOKENS, TOKENS_PER_SLOT, SLOT_COUNT, VOCAB_SIZE

CHECKPOINT_MAGIC = b"PCSO"
CHECKPOINT_VERSION = 1


class BadMagicError(ValueError):
    pass


class VersionMismatchError(ValueError):
    pass


class InvalidPermutationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RendererConfig:
    image_size: int = 128
    patch: int = 16
    d_model: int = 64
    heads: int = 4
    layers: int = 2
    d_ff: int = 256

    def __post_init__(self):
        if self.image_size % self.patch:
            raise ValueError("image_size must be divisible by patch")
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch) ** 2

    @staticmethod
    def desk(image_size: int = 64) -> "RendererConfig":
        return RendererConfig(image_size=image_size)

    @staticmethod
    def full(image_size: int = 128) -> "RendererConfig":
        return RendererConfig(
            image_size=image_size, d_model=256, heads=8, layers=12, d_ff=1024
        )


@dataclass(frozen=True)
class ParameterizerConfig:
    image_size: int = 128
    patch: int = 16
    d_model: int = 64
    heads: int = 4
    layers: int = 2
    d_ff: int = 256
    backbone_channels: int = 8
    backbone_layers: int = 3

    def __post_init__(self):
        if self.image_size % self.patch:
            raise ValueError("image_size must be divisible by patch")
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch) ** 2

    @staticmethod
    def desk(image_size: int = 64) -> "ParameterizerConfig":
        return ParameterizerConfig(image_size=image_size)

    @staticmethod
    def full(image_size: int = 128) -> "ParameterizerConfig":
        return ParameterizerConfig(
            image_size=image_size, d_model=256, heads=8, layers=4, d_ff=1024,
            backbone_channels=16,
        )


# ---------------------------------------------------------------------------
# parameter declaration / initialization
# ---------------------------------------------------------------------------

def _linear_decl(prefix, d_in, d_out):
    return [(f"{prefix}.w", (d_in, d_out), "normal"),
            (f"{prefix}.b", (d_out,), "zeros")]


def _ln_decl(prefix, d):
    return [(f"{prefix}.g", (d,), "ones"), (f"{prefix}.b", (d,), "zeros")]


def _attn_decl(prefix, d):
    decl = []
    for part in ("q", "k", "v", "o"):
        decl += _linear_decl(f"{prefix}.{part}", d, d)
    return decl


def _block_decl(prefix, d, d_ff, cross):
    decl = _ln_decl(f"{prefix}.ln1", d) + _attn_decl(f"{prefix}.self", d)
    if cross:
        decl += _ln_decl(f"{prefix}.ln2", d) + _attn_decl(f"{prefix}.cross", d)
    decl += _ln_decl(f"{prefix}.ln3", d)
    decl += _linear_decl(f"{prefix}.fc1", d, d_ff)
    decl += _linear_decl(f"{prefix}.fc2", d_ff, d)
    return decl


def _renderer_decl(cfg: RendererConfig):
    d = cfg.d_model
    decl = _linear_decl("embed", VOCAB_SIZE, d)
    for i in range(cfg.layers):
        decl += _block_decl(f"enc.{i}", d, cfg.d_ff, cross=False)
    decl += _ln_decl("enc_ln", d)
    decl += [("queries", (cfg.num_patches, d), "normal")]
    for i in range(cfg.layers):
        decl += _block_decl(f"dec.{i}", d, cfg.d_ff, cross=True)
    decl += _ln_decl("dec_ln", d)
    decl += _linear_decl("head", d, cfg.patch * cfg.patch)
    return decl


def _parameterizer_decl(cfg: ParameterizerConfig):
    d, c = cfg.d_model, cfg.backbone_channels
    decl = []
    for i in range(cfg.backbone_layers):
        c_in = 1 if i == 0 else c
        decl += [(f"conv.{i}.w", (c, c_in, 3, 3), "normal"),
                 (f"conv.{i}.b", (c,), "zeros")]
    decl += _linear_decl("patch_embed", c * cfg.patch * cfg.patch, d)
    for i in range(cfg.layers):
        decl += _block_decl(f"enc.{i}", d, cfg.d_ff, cross=False)
    decl += _ln_decl("enc_ln", d)
    decl += [("queries", (GRID_TOKENS, d), "normal")]
    for i in range(cfg.layers):
        decl += _block_decl(f"dec.{i}", d, cfg.d_ff, cross=True)
    decl += _ln_decl("dec_ln", d)
    decl += _linear_decl("head", d, VOCAB_SIZE)
    return decl


_INIT_SCALE = 0.02


def _build_store(decl, seed: int) -> ParameterStore:
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    store = ParameterStore()
    for name, shape, kind in decl:
        if kind == "normal":
            data = rng.normal(0.0, _INIT_SCALE, size=shape)
        elif kind == "zeros":
            data = np.zeros(shape)
        else:
            data = np.ones(shape)
        store.add(name, data)
    return store


def _verify_store(decl, store: ParameterStore) -> None:
    expected = {name: shape for name, shape, _ in decl}
    for name, shape in expected.items():
        if name not in store:
            raise ShapeMismatchError(f"checkpoint is missing parameter {name!r}")
        if store[name].shape != shape:
            raise ShapeMismatchError(
                f"parameter {name!r}: expected shape {shape}, "
                f"checkpoint has {store[name].shape}"
            )
    for name in store.names():
        if name not in expected:
            raise ShapeMismatchError(f"unexpected parameter {name!r} in checkpoint")


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    """Fixed (n, d) sine/cosine position table."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / d)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(np.float32)


# ---------------------------------------------------------------------------
# transformer forward pieces
# ---------------------------------------------------------------------------

def _linear(store, prefix, x):
    return ad.add(ad.matmul(x, store[f"{prefix}.w"]), store[f"{prefix}.b"])


def _ln(store, prefix, x):
    return ad.layer_norm(x, store[f"{prefix}.g"], store[f"{prefix}.b"])


def _attention(store, prefix, q_in, kv_in, heads):
    b, lq, d = q_in.shape
    lk = kv_in.shape[1]
    dh = d // heads
    q = _linear(store, f"{prefix}.q", q_in)
    k = _linear(store, f"{prefix}.k", kv_in)
    v = _linear(store, f"{prefix}.v", kv_in)

    def split(t, length):
        return ad.transpose(ad.reshape(t, (b, length, heads, dh)), (0, 2, 1, 3))

    qh, kh, vh = split(q, lq), split(k, lk), split(v, lk)
    scores = ad.mul(ad.matmul(qh, ad.transpose(kh, (0, 1, 3, 2))),
                    1.0 / math.sqrt(dh))
    out = ad.matmul(ad.softmax(scores), vh)
    out = ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (b, lq, d))
    return _linear(store, f"{prefix}.o", out)


def _ffn(store, prefix, x):
    return _linear(store, f"{prefix}.fc2",
                   ad.gelu(_linear(store, f"{prefix}.fc1", x)))


def _self_block(store, prefix, x, heads):
    # self-attention consumes its own normalized input as keys/values
    x_n = _ln(store, f"{prefix}.ln1", x)
    x = ad.add(x, _attention(store, f"{prefix}.self", x_n, x_n, heads))
    x = ad.add(x, _ffn(store, prefix, _ln(store, f"{prefix}.ln3", x)))
    return x


def _dec_block(store, prefix, x, enc_out, heads):
    x_n = _ln(store, f"{prefix}.ln1", x)
    x = ad.add(x, _attention(store, f"{prefix}.self", x_n, x_n, heads))
    x = ad.add(x, _attention(store, f"{prefix}.cross",
                             _ln(store, f"{prefix}.ln2", x), enc_out, heads))
    x = ad.add(x, _ffn(store, prefix, _ln(store, f"{prefix}.ln3", x)))
    return x


def _expand(t: Tensor, batch: int) -> Tensor:
    """Broadcast an unbatched (L, D) tensor to (batch, L, D)."""
    return ad.add(t, Tensor(np.zeros((batch, 1, 1), dtype=np.float32)))


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

class SketchRenderer:
    """Differentiable token-set -> image renderer."""

    def __init__(self, cfg: RendererConfig, store: ParameterStore | None = None,
                 seed: int = 0):
        decl = _renderer_decl(cfg)
        if store is None:
            store = _build_store(decl, seed)
        else:
            _verify_store(decl, store)
        self.cfg = cfg
        self.store = store
        self.positions = Tensor(sinusoidal_positions(GRID_TOKENS, cfg.d_model))

    @classmethod
    def from_checkpoint(cls, cfg: RendererConfig, path) -> "SketchRenderer":
        return cls(cfg, store=load_checkpoint(path))

    def embed_tokens(self, tokens) -> Tensor:
        """The token embedding map alone (affine in the probability rows)."""
        t, _ = _as_batched(tokens, (GRID_TOKENS, VOCAB_SIZE), "token array")
        return _linear(self.store, "embed", t)

    def __call__(self, tokens) -> Tensor:
        return srn_forward(self, tokens)


def srn_forward(model: SketchRenderer, tokens) -> Tensor:
    """Render token probabilities (or one-hot rows) into an (S, S) image.

    Accepts (128, 73) or batched (B, 128, 73) input; the output carries the
    matching batch shape. Differentiable in both tokens and weights.
    """
    cfg, store = model.cfg, model.store
    t, batched = _as_batched(tokens, (GRID_TOKENS, VOCAB_SIZE), "token array")
    b = t.shape[0]
    x = ad.add(_linear(store, "embed", t), model.positions)
    for i in range(cfg.layers):
        x = _self_block(store, f"enc.{i}", x, cfg.heads)
    enc_out = _ln(store, "enc_ln", x)
    q = _expand(store["queries"], b)
    for i in range(cfg.layers):
        q = _dec_block(store, f"dec.{i}", q, enc_out, cfg.heads)
    q = _ln(store, "dec_ln", q)
    patches = ad.sigmoid(_linear(store, "head", q))  # (B, P, patch^2)
    g = cfg.image_size // cfg.patch
    p = cfg.patch
    img = ad.reshape(patches, (b, g, g, p, p))
    img = ad.transpose(img, (0, 1, 3, 2, 4))
    img = ad.reshape(img, (b, cfg.image_size, cfg.image_size))
    if not batched:
        img = ad.reshape(img, (cfg.image_size, cfg.image_size))
    return img


class SketchParameterizer:
    """Image -> token-probability parameterizer."""

    def __init__(self, cfg: ParameterizerConfig,
                 store: ParameterStore | None = None, seed: int = 0):
        decl = _parameterizer_decl(cfg)
        if store is None:
            store = _build_store(decl, seed)
        else:
            _verify_store(decl, store)
        self.cfg = cfg
        self.store = store
        self.positions = Tensor(sinusoidal_positions(cfg.num_patches, cfg.d_model))

    @classmethod
    def from_checkpoint(cls, cfg: ParameterizerConfig, path):
        return cls(cfg, store=load_checkpoint(path))

    def __call__(self, image) -> Tensor:
        return spn_forward(self, image)


def spn_forward(model: SketchParameterizer, image) -> Tensor:
    """Predict (128, 73) row-stochastic token probabilities for an image.

    Accepts (S, S) or batched (B, S, S) input.
    """
    cfg, store = model.cfg, model.store
    x, batched = _as_batched(image, (cfg.image_size, cfg.image_size), "image")
    b, s = x.shape[0], cfg.image_size
    x = ad.reshape(x, (b, 1, s, s))
    for i in range(cfg.backbone_layers):
        x = ad.gelu(ad.conv2d(x, store[f"conv.{i}.w"], store[f"conv.{i}.b"]))
    c, p, g = cfg.backbone_channels, cfg.patch, cfg.image_size // cfg.patch
    x = ad.reshape(x, (b, c, g, p, g, p))
    x = ad.transpose(x, (0, 2, 4, 1, 3, 5))
    x = ad.reshape(x, (b, g * g, c * p * p))
    x = ad.add(_linear(store, "patch_embed", x), model.positions)
    for i in range(cfg.layers):
        x = _self_block(store, f"enc.{i}", x, cfg.heads)
    enc_out = _ln(store, "enc_ln", x)
    q = _expand(store["queries"], b)
    for i in range(cfg.layers):
        q = _dec_block(store, f"dec.{i}", q, enc_out, cfg.heads)
    q = _ln(store, "dec_ln", q)
    probs = ad.softmax(_linear(store, "head", q))  # (B, 128, 73)
    if not batched:
        probs = ad.reshape(probs, (GRID_TOKENS, VOCAB_SIZE))
    return probs


def _as_batched(x, trailing_shape, what) -> tuple[Tensor, bool]:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))
    nd = len(trailing_shape)
    if t.shape == trailing_shape:
        return ad.reshape(t, (1, *trailing_shape)), False
    if t.ndim == nd + 1 and t.shape[1:] == trailing_shape:
        return t, True
    raise ShapeMismatchError(
        f"{what} must have shape {trailing_shape} or (batch, *that), got {t.shape}"
    )


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def multiscale_l2(a, b) -> Tensor:
    """Sum over the 5 pyramid levels of the mean squared pixel difference.

    Each level contributes its per-pixel mean, so the five terms are
    comparable despite different pixel counts.
    """
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.shape[-1] % 16 or a.shape[-2] % 16:
        raise ShapeMismatchError(
            f"image dims {a.shape[-2:]} must be divisible by 16"
        )
    loss = ad.mse(a, b)
    for _ in range(4):
        a = ad.avgpool2(a)
        b = ad.avgpool2(b)
        loss = ad.add(loss, ad.mse(a, b))
    return loss


def image_loss(a, b, kind: str) -> Tensor:
    """Rendering loss between prediction a and target b.

    kind: "bce" (prediction clamped to [1e-6, 1 - 1e-6]), "l2" (single-scale
    mean squared error), or "multiscale_l2".
    """
    if kind == "l2":
        a = a if isinstance(a, Tensor) else Tensor(a)
        b = b if isinstance(b, Tensor) else Tensor(b)
        if a.shape != b.shape:
            raise ShapeMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")
        return ad.mse(a, b)
    if kind == "multiscale_l2":
        return multiscale_l2(a, b)
    if kind == "bce":
        a = a if isinstance(a, Tensor) else Tensor(a)
        b = b if isinstance(b, Tensor) else Tensor(b)
        if a.shape != b.shape:
            raise ShapeMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")
        pred = ad.clip(a, 1e-6, 1.0 - 1e-6)
        term = ad.add(ad.mul(b, ad.log(pred)),
                      ad.mul(ad.sub(1.0, b), ad.log(ad.sub(1.0, pred))))
        return ad.neg(ad.mean(term))
    raise ValueError(f"unknown image loss kind {kind!r}")


def permuted_target_probs(target_grid, permutation) -> np.ndarray:
    """(128, 73) one-hot target with slot i placed at prediction slot pi(i)."""
    perm = np.asarray(permutation, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(SLOT_COUNT)):
        raise InvalidPermutationError(
            f"assignment must be a permutation of 0..{SLOT_COUNT - 1}, got {perm}"
        )
    slots = target_grid.slots if hasattr(target_grid, "slots") else np.asarray(target_grid)
    out = np.zeros((GRID_TOKENS, VOCAB_SIZE), dtype=np.float32)
    for i in range(SLOT_COUNT):
        rows = perm[i] * TOKENS_PER_SLOT + np.arange(TOKENS_PER_SLOT)
        out[rows, slots[i]] = 1.0
    return out


def token_cross_entropy(pred, target_grid, assignment) -> Tensor:
    """Mean over all 128 token positions of -log p(target token), with
    prediction slots permuted by the assignment."""
    perm = getattr(assignment, "permutation", assignment)
    target = permuted_target_probs(target_grid, perm)
    pred_t = pred if isinstance(pred, Tensor) else Tensor(pred)
    if pred_t.shape != (GRID_TOKENS, VOCAB_SIZE):
        raise ShapeMismatchError(
            f"prediction must be ({GRID_TOKENS}, {VOCAB_SIZE}), got {pred_t.shape}"
        )
    return ad.cross_entropy(pred_t, target)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(store: ParameterStore, path) -> None:
    """Versioned binary dump; loads back bit-exactly."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(store)))
        for name, t in store.items():
            blob = name.encode("utf-8")
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<I", t.data.ndim))
            fh.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            fh.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_checkpoint(path) -> ParameterStore:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise BadMagicError(f"bad checkpoint magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(
            f"checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )
    pos = 12
    store = ParameterStore()
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        size = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(blob, dtype="<f4", count=size, offset=pos)
        pos += 4 * size
        store.add(name, data.reshape(shape).copy())
    return store
