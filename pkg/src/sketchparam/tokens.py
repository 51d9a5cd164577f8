"""Discrete token representation of sketches: 6-bit quantizer, vocabulary,
fixed-slot token grids, and the (de)tokenization rules with syntax checking.

Every primitive occupies one slot of 8 tokens over a 73-symbol vocabulary:

    0       padding
    1, 2    start / end framing markers (serialized stream only)
    3..6    primitive type: arc, circle, line, point
    7..70   quantized parameter value (64 bins)
    71, 72  construction / regular flag

Slot layout is [type, params..., flag, padding...]; an arc fills all eight
positions (1 type + 6 params + 1 flag), which is what fixes the slot width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .primitives import MAX_PRIMITIVES, Primitive, Sketch

BIN_COUNT = 64
BIN_WIDTH = 1.0 / BIN_COUNT

PAD = 0
START = 1
END = 2
TYPE_TOKENS = {"arc": 3, "circle": 4, "line": 5, "point": 6}
KIND_OF_TOKEN = {v: k for k, v in TYPE_TOKENS.items()}
PARAM_BASE = 7
PARAM_MAX = 70
CONSTRUCTION = 71
NON_CONSTRUCTION = 72
VOCAB_SIZE = 73

TOKENS_PER_SLOT = 8
SLOT_COUNT = MAX_PRIMITIVES
GRID_TOKENS = SLOT_COUNT * TOKENS_PER_SLOT

TOKEN_DESCRIPTIONS = {
    PAD: "padding",
    START: "start",
    END: "end",
    3: "arc",
    4: "circle",
    5: "line",
    6: "point",
    CONSTRUCTION: "construction",
    NON_CONSTRUCTION: "non-construction",
}


class OutOfRangeError(ValueError):
    """Raised when a bin index falls outside [0, 63]."""


class TooManyPrimitivesError(ValueError):
    """Raised when tokenizing a sketch with more than SLOT_COUNT primitives."""


def quantize(v: float) -> int:
    """Map a real value to its 6-bit bin index.

    Bin k covers ((k-1)/64, k/64]; inputs outside (-1/64, 63/64] clamp to the
    nearest end bin, so 0.0 lands in bin 0 and 1.0 in bin 63.
    """
    if not math.isfinite(v):
        raise ValueError(f"cannot quantize non-finite value {v!r}")
    return min(BIN_COUNT - 1, max(0, math.ceil(v * BIN_COUNT)))


def dequantize(k: int) -> float:
    """Right bin edge k/64, the exact preimage that re-quantizes to k."""
    if not 0 <= k < BIN_COUNT:
        raise OutOfRangeError(f"bin index {k} outside [0, {BIN_COUNT - 1}]")
    return k * BIN_WIDTH


def _param_tokens(values) -> list[int]:
    return [PARAM_BASE + quantize(v) for v in values]


@dataclass(frozen=True)
class TokenGrid:
    """Fixed 16-slot x 8-token integer grid."""

    slots: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.slots, dtype=np.int64)
        if arr.shape != (SLOT_COUNT, TOKENS_PER_SLOT):
            raise ValueError(
                f"token grid must be {SLOT_COUNT}x{TOKENS_PER_SLOT}, got {arr.shape}"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "slots", arr)

    def __eq__(self, other):
        if not isinstance(other, TokenGrid):
            return NotImplemented
        return bool(np.array_equal(self.slots, other.slots))

    def __hash__(self):
        return hash(self.slots.tobytes())

    def framed(self) -> np.ndarray:
        """Grid with start/end framing slots prepended/appended (18 x 8).

        The framing slots exist only in the serialized stream; training and
        matching operate on the 16 primitive slots.
        """
        start = np.zeros(TOKENS_PER_SLOT, dtype=np.int64)
        end = np.zeros(TOKENS_PER_SLOT, dtype=np.int64)
        start[0], end[0] = START, END
        return np.vstack([start, self.slots, end])

    def flat(self) -> np.ndarray:
        return self.slots.reshape(GRID_TOKENS)


def one_hot(grid: TokenGrid) -> np.ndarray:
    """(128, 73) float32 one-hot encoding of the 16 primitive slots."""
    flat = grid.flat()
    out = np.zeros((GRID_TOKENS, VOCAB_SIZE), dtype=np.float32)
    out[np.arange(GRID_TOKENS), flat] = 1.0
    return out


def tokenize(sketch: Sketch) -> TokenGrid:
    """Encode a sketch into its slot grid.

    Slot i encodes primitive i; unused slots are all padding. The caller is
    responsible for primitive validity (coordinates in [0, 1], no degenerate
    primitives after quantization); values outside the domain clamp.
    """
    if len(sketch) > SLOT_COUNT:
        raise TooManyPrimitivesError(
            f"{len(sketch)} primitives exceed the {SLOT_COUNT}-slot grid"
        )
    slots = np.zeros((SLOT_COUNT, TOKENS_PER_SLOT), dtype=np.int64)
    for i, prim in enumerate(sketch):
        row = [TYPE_TOKENS[prim.kind]]
        row.extend(_param_tokens(prim.params))
        row.append(CONSTRUCTION if prim.construction else NON_CONSTRUCTION)
        slots[i, : len(row)] = row
    return TokenGrid(slots)


def _decode_slot(slot: np.ndarray) -> tuple[Primitive | None, str]:
    """Decode one 8-token slot; returns (primitive-or-None, status string)."""
    if np.all(slot == PAD):
        return None, "empty"
    if np.any(slot < 0) or np.any(slot >= VOCAB_SIZE):
        return None, "invalid: token outside vocabulary"
    t0 = int(slot[0])
    if t0 not in KIND_OF_TOKEN:
        return None, f"invalid: slot starts with non-type token {t0}"
    kind = KIND_OF_TOKEN[t0]
    n_params = {"arc": 6, "circle": 3, "line": 4, "point": 2}[kind]
    params = slot[1 : 1 + n_params]
    flag = int(slot[1 + n_params])
    trailing = slot[2 + n_params :]
    if np.any(params < PARAM_BASE) or np.any(params > PARAM_MAX):
        return None, "invalid: parameter token outside [7, 70]"
    if flag not in (CONSTRUCTION, NON_CONSTRUCTION):
        return None, "invalid: missing construction token"
    if np.any(trailing != PAD):
        return None, "invalid: non-zero padding"
    bins = [int(p) - PARAM_BASE for p in params]
    if kind == "line" and bins[0] == bins[2] and bins[1] == bins[3]:
        return None, "invalid: degenerate line (coincident endpoints)"
    if kind == "arc":
        pts = [(bins[0], bins[1]), (bins[2], bins[3]), (bins[4], bins[5])]
        if len(set(pts)) < 3:
            return None, "invalid: degenerate arc (coincident control points)"
    values = [dequantize(b) for b in bins]
    if kind == "circle" and bins[2] == 0:
        # zero radius bin decodes to the smallest representable radius
        values[2] = dequantize(1)
    prim = Primitive(kind, tuple(values), flag == CONSTRUCTION)
    return prim, "ok"


def detokenize(grid: TokenGrid | np.ndarray) -> tuple[Sketch, list[str]]:
    """Decode a grid into surviving primitives plus a per-slot report.

    Accepts arbitrary integer grids (e.g. network argmax output). Slots with
    broken syntax or degenerate geometry are dropped, never repaired; the
    report holds "ok", "empty", or "invalid: <reason>" per slot.
    """
    slots = grid.slots if isinstance(grid, TokenGrid) else np.asarray(grid)
    if slots.shape != (SLOT_COUNT, TOKENS_PER_SLOT):
        raise ValueError(
            f"expected {SLOT_COUNT}x{TOKENS_PER_SLOT} grid, got {slots.shape}"
        )
    prims = []
    report = []
    for i in range(SLOT_COUNT):
        prim, status = _decode_slot(slots[i])
        report.append(status)
        if prim is not None:
            prims.append(prim)
    return Sketch(tuple(prims)), report


def validate_sketch(sketch: Sketch) -> list[str]:
    """Pre-tokenization validity issues (empty list when clean)."""
    issues = []
    for i, prim in enumerate(sketch):
        for v in prim.params:
            if not 0.0 <= v <= 1.0:
                issues.append(f"primitive {i}: value {v} outside [0, 1]")
                break
        bins = [quantize(v) for v in prim.params]
        if prim.kind == "line" and bins[:2] == bins[2:]:
            issues.append(f"primitive {i}: line endpoints coincide after quantization")
        if prim.kind == "arc":
            pts = {(bins[0], bins[1]), (bins[2], bins[3]), (bins[4], bins[5])}
            if len(pts) < 3:
                issues.append(f"primitive {i}: arc control points coincide")
        if prim.kind == "circle" and prim.params[2] <= 0:
            issues.append(f"primitive {i}: non-positive radius")
    return issues
