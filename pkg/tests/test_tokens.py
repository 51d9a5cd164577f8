import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sketchparam.primitives import Primitive, Sketch
from sketchparam.tokens import (
    BIN_COUNT,
    GRID_TOKENS,
    TOKEN_DESCRIPTIONS,
    TokenGrid,
    TooManyPrimitivesError,
    OutOfRangeError,
    dequantize,
    detokenize,
    one_hot,
    quantize,
    tokenize,
    validate_sketch,
)


def test_quantize_anchor_bins():
    # 0.0 lies in the bin (-0.015625, 0]
    assert quantize(0.0) == 0
    assert quantize(-0.01) == 0
    assert quantize(1.0) == 63
    assert quantize(0.5) == 32  # 0.5 in (31/64, 32/64]
    assert quantize(5.0) == 63
    assert quantize(-5.0) == 0


def test_quantize_dequantize_identity_exhaustive():
    for k in range(BIN_COUNT):
        assert quantize(dequantize(k)) == k


def test_dequantize_edges():
    assert dequantize(0) == 0.0
    assert dequantize(63) == 0.984375
    with pytest.raises(OutOfRangeError):
        dequantize(64)
    with pytest.raises(OutOfRangeError):
        dequantize(-1)


@given(st.floats(min_value=-10, max_value=10, allow_nan=False))
def test_quantize_monotone(v):
    assert quantize(v) <= quantize(v + 0.25)


@given(st.floats(min_value=0.0, max_value=1.0, exclude_max=True))
def test_roundtrip_error_below_bin_width(v):
    # exact rational arithmetic: float subtraction rounds the error up to
    # exactly 1/64 for v within one ulp of a bin edge
    from fractions import Fraction

    err = abs(Fraction(v) - Fraction(quantize(v), 64))
    assert err < Fraction(1, 64)


def test_roundtrip_error_at_clamped_top():
    # 1.0 clamps into bin 63; the error attains exactly one bin width there
    assert abs(1.0 - dequantize(quantize(1.0))) == 1.0 / 64


def test_vocabulary_labels():
    assert TOKEN_DESCRIPTIONS[0] == "padding"
    assert TOKEN_DESCRIPTIONS[3] == "arc"
    assert TOKEN_DESCRIPTIONS[6] == "point"
    assert TOKEN_DESCRIPTIONS[72] == "non-construction"


# ---------------------------------------------------------------------------
# tokenize
# ---------------------------------------------------------------------------

def test_tokenize_line_example():
    grid = tokenize(Sketch((Primitive.line(0, 0, 1, 1),)))
    assert grid.slots[0].tolist() == [5, 7, 7, 70, 70, 72, 0, 0]


def test_tokenize_construction_point_example():
    grid = tokenize(Sketch((Primitive.point(0.5, 0.5, construction=True),)))
    assert grid.slots[0].tolist() == [6, 39, 39, 71, 0, 0, 0, 0]


def test_tokenize_empty_sketch_framed():
    grid = tokenize(Sketch(()))
    assert np.all(grid.slots == 0)
    framed = grid.framed()
    assert framed.shape == (18, 8)
    assert framed[0].tolist() == [1, 0, 0, 0, 0, 0, 0, 0]
    assert framed[-1].tolist() == [2, 0, 0, 0, 0, 0, 0, 0]
    assert np.all(framed[1:-1] == 0)


def test_tokenize_too_many():
    prims = tuple(Primitive.point(i / 16, i / 16) for i in range(16))
    tokenize(Sketch(prims))  # 16 fills the grid exactly
    with pytest.raises(ValueError):
        Sketch(prims + (Primitive.point(0.5, 0.5),))


def test_tokenize_rejects_oversized_input():
    # a sketch that bypasses the Sketch constructor cap still gets caught
    class Fake:
        def __len__(self):
            return 17

        def __iter__(self):
            return iter(Primitive.point(0.1, 0.1) for _ in range(17))

    with pytest.raises(TooManyPrimitivesError):
        tokenize(Fake())


def test_arc_uses_all_eight_positions():
    grid = tokenize(Sketch((Primitive.arc(0, 0, 0.5, 0.5, 1, 0),)))
    slot = grid.slots[0]
    assert slot[0] == 3
    assert np.all(slot[1:7] >= 7) and np.all(slot[1:7] <= 70)
    assert slot[7] in (71, 72)


# ---------------------------------------------------------------------------
# detokenize
# ---------------------------------------------------------------------------

def _grid_with_slot(tokens8):
    slots = np.zeros((16, 8), dtype=np.int64)
    slots[0] = tokens8
    return TokenGrid(slots)


def test_detokenize_degenerate_line_dropped():
    sketch, report = detokenize(_grid_with_slot([5, 7, 7, 7, 7, 72, 0, 0]))
    assert len(sketch) == 0
    assert report[0].startswith("invalid: degenerate line")


def test_detokenize_out_of_vocab_dropped():
    sketch, report = detokenize(_grid_with_slot([4, 7, 7, 100, 72, 0, 0, 0]))
    assert len(sketch) == 0
    assert report[0] == "invalid: token outside vocabulary"


def test_detokenize_bad_type_token():
    sketch, report = detokenize(_grid_with_slot([9, 7, 7, 7, 7, 72, 0, 0]))
    assert len(sketch) == 0
    assert "non-type token" in report[0]


def test_detokenize_nonzero_padding():
    sketch, report = detokenize(_grid_with_slot([6, 10, 12, 72, 0, 0, 0, 5]))
    assert len(sketch) == 0
    assert report[0] == "invalid: non-zero padding"


def test_detokenize_missing_construction():
    sketch, report = detokenize(_grid_with_slot([6, 10, 12, 0, 0, 0, 0, 0]))
    assert len(sketch) == 0
    assert report[0] == "invalid: missing construction token"


def test_detokenize_zero_radius_clamps():
    sketch, report = detokenize(_grid_with_slot([4, 39, 39, 7, 72, 0, 0, 0]))
    assert report[0] == "ok"
    assert sketch.primitives[0].params[2] == dequantize(1)


def test_detokenize_accepts_network_garbage():
    rng = np.random.default_rng(0)
    grid = rng.integers(0, 73, size=(16, 8))
    sketch, report = detokenize(grid)
    assert len(report) == 16
    assert all(isinstance(r, str) for r in report)


# ---------------------------------------------------------------------------
# round-trip properties
# ---------------------------------------------------------------------------

def _valid_primitives(rng, count):
    prims = []
    while len(prims) < count:
        kind = ("line", "circle", "arc", "point")[rng.integers(0, 4)]
        vals = rng.random({"line": 4, "circle": 3, "arc": 6, "point": 2}[kind])
        prim = Primitive(kind, tuple(vals), bool(rng.random() < 0.2))
        if kind == "circle":
            prim = Primitive(kind, (vals[0], vals[1], max(vals[2], 0.05)),
                             prim.construction)
        if not validate_sketch(Sketch((prim,))):
            prims.append(prim)
    return Sketch(tuple(prims))


def test_roundtrip_random_corpus():
    rng = np.random.default_rng(7)
    for _ in range(300):
        sketch = _valid_primitives(rng, int(rng.integers(1, 17)))
        back, report = detokenize(tokenize(sketch))
        assert all(r != "invalid" for r in report)
        assert len(back) == len(sketch)
        for orig, rec in zip(sketch, back):
            assert orig.kind == rec.kind
            assert orig.construction == rec.construction
            for a, b in zip(orig.params, rec.params):
                assert abs(a - b) < 1.0 / 64


def test_validate_then_detokenize_idempotent():
    rng = np.random.default_rng(11)
    for _ in range(100):
        grid = rng.integers(0, 73, size=(16, 8))
        sketch1, _ = detokenize(grid)
        sketch2, _ = detokenize(tokenize(sketch1))
        assert sketch1 == sketch2


def test_tokenize_output_passes_validity_with_zero_drops():
    rng = np.random.default_rng(13)
    for _ in range(100):
        sketch = _valid_primitives(rng, int(rng.integers(1, 17)))
        _, report = detokenize(tokenize(sketch))
        assert not any(r.startswith("invalid") for r in report)


def test_one_hot_shape_and_rows():
    grid = tokenize(Sketch((Primitive.line(0, 0, 1, 1),)))
    oh = one_hot(grid)
    assert oh.shape == (GRID_TOKENS, 73)
    assert np.all(oh.sum(axis=1) == 1.0)
    assert oh[0, 5] == 1.0
