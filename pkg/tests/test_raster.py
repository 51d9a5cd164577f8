import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sketchparam.matching import metric_chamfer
from sketchparam.primitives import Primitive, Sketch
from sketchparam.raster import (
    CollinearError,
    HanddrawConfig,
    IndivisibleDimsError,
    MalformedHeaderError,
    build_pyramid,
    circumcircle,
    rasterize,
    read_pgm,
    synthesize_handdrawn,
    write_pgm,
)


# ---------------------------------------------------------------------------
# rasterize
# ---------------------------------------------------------------------------

def test_horizontal_line_exact_extent():
    img = rasterize(Sketch((Primitive.line(0.25, 0.5, 0.75, 0.5),)), 128, 128)
    rows, cols = np.nonzero(img)
    assert set(rows.tolist()) == {64}
    assert cols.min() == 32 and cols.max() == 95
    assert len(cols) == 64  # contiguous single-row run


def test_empty_sketch_all_zero():
    img = rasterize(Sketch(()), 128, 128)
    assert not img.any()


def test_circle_mirror_symmetry():
    img = rasterize(Sketch((Primitive.circle(0.5, 0.5, 0.25),)), 128, 128)
    assert np.array_equal(img, img[:, ::-1])
    assert np.array_equal(img, img[::-1, :])


def test_binary_values_only():
    sk = Sketch((
        Primitive.circle(0.5, 0.5, 0.3),
        Primitive.arc(0.1, 0.1, 0.5, 0.8, 0.9, 0.1),
        Primitive.line(0.0, 0.0, 1.0, 1.0),
        Primitive.point(0.9, 0.1),
    ))
    img = rasterize(sk, 128, 128)
    assert set(np.unique(img)) <= {0.0, 1.0}


def test_construction_renders_identically():
    a = rasterize(Sketch((Primitive.line(0.2, 0.2, 0.8, 0.8, construction=True),)))
    b = rasterize(Sketch((Primitive.line(0.2, 0.2, 0.8, 0.8),)))
    assert np.array_equal(a, b)


def test_every_primitive_contributes_pixels():
    rng = np.random.default_rng(0)
    for _ in range(50):
        kind = ("line", "circle", "arc", "point")[rng.integers(0, 4)]
        if kind == "line":
            p = Primitive.line(*rng.random(2), *(rng.random(2)))
        elif kind == "circle":
            p = Primitive.circle(0.5, 0.5, 0.05 + 0.4 * rng.random())
        elif kind == "arc":
            p = Primitive.arc(*rng.random(6))
        else:
            p = Primitive.point(*rng.random(2))
        assert rasterize(Sketch((p,)), 128, 128).sum() >= 1


def test_point_block():
    img = rasterize(Sketch((Primitive.point(0.5, 0.5),)), 129, 129)
    assert img.sum() == 9  # clean 3x3 block away from borders


def test_rasterize_deterministic():
    sk = Sketch((Primitive.arc(0.1, 0.2, 0.5, 0.9, 0.9, 0.3),
                 Primitive.circle(0.3, 0.6, 0.2)))
    assert np.array_equal(rasterize(sk), rasterize(sk))


def test_collinear_arc_renders_as_segment():
    arc = Primitive.arc(0.2, 0.5, 0.5, 0.5, 0.8, 0.5)
    seg = Primitive.line(0.2, 0.5, 0.8, 0.5)
    assert np.array_equal(rasterize(Sketch((arc,))), rasterize(Sketch((seg,))))


# ---------------------------------------------------------------------------
# circumcircle
# ---------------------------------------------------------------------------

def test_circumcircle_symmetric_case():
    (cx, cy), r, sweep = circumcircle((1, 0), (0, 1), (-1, 0))
    assert math.isclose(cx, 0, abs_tol=1e-12)
    assert math.isclose(cy, 0, abs_tol=1e-12)
    assert math.isclose(r, 1, rel_tol=1e-12)
    # positive (counterclockwise) sweep passes through (0, 1)
    assert sweep > 0 and math.isclose(abs(sweep), math.pi, rel_tol=1e-12)


def test_circumcircle_collinear():
    with pytest.raises(CollinearError):
        circumcircle((0, 0), (0.5, 1e-12), (1, 0))


@settings(max_examples=200)
@given(st.lists(st.floats(min_value=0, max_value=1, allow_nan=False),
                min_size=6, max_size=6))
def test_circumcircle_residual(vals):
    a, b, c = (vals[0], vals[1]), (vals[2], vals[3]), (vals[4], vals[5])
    cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    if abs(cross) < 1e-3:  # well-conditioned triples only
        return
    (cx, cy), r, _ = circumcircle(a, b, c)
    for px, py in (a, b, c):
        assert abs(math.hypot(px - cx, py - cy) - r) < 1e-9


def test_sweep_passes_through_mid():
    (cx, cy), r, sweep = circumcircle((1, 0), (0, -1), (-1, 0))
    # going through (0, -1) means clockwise in this frame
    assert sweep < 0


# ---------------------------------------------------------------------------
# hand-drawn synthesis
# ---------------------------------------------------------------------------

def hd_sketch():
    return Sketch((
        Primitive.line(0.1, 0.1, 0.9, 0.2),
        Primitive.circle(0.5, 0.5, 0.25),
        Primitive.arc(0.2, 0.8, 0.5, 0.6, 0.8, 0.8),
        Primitive.point(0.1, 0.9),
    ))


def test_zero_noise_bit_identical():
    cfg = HanddrawConfig(translation_sigma=0.0, rotation_sigma_deg=0.0,
                         gp_amplitude=0.0, seed=5)
    assert np.array_equal(synthesize_handdrawn(hd_sketch(), cfg),
                          rasterize(hd_sketch()))


def test_same_seed_bit_identical():
    cfg = HanddrawConfig(seed=9)
    a = synthesize_handdrawn(hd_sketch(), cfg)
    b = synthesize_handdrawn(hd_sketch(), cfg)
    assert np.array_equal(a, b)


def test_different_seed_differs():
    a = synthesize_handdrawn(hd_sketch(), HanddrawConfig(seed=1))
    b = synthesize_handdrawn(hd_sketch(), HanddrawConfig(seed=2))
    assert not np.array_equal(a, b)


def test_default_perturbation_chamfer_band():
    # defaults visibly move strokes without destroying topology
    from sketchparam.synthgen import GeneratorConfig, rng_stream, sample_sketch

    gen = GeneratorConfig(seed=23)
    rng = rng_stream(23, 0)
    cds = []
    for i in range(100):
        _, sketch = sample_sketch(gen, rng)
        precise = rasterize(sketch, 128, 128)
        hand = synthesize_handdrawn(sketch, HanddrawConfig(seed=i), 128, 128)
        cds.append(metric_chamfer(hand, precise))
    mean_cd = float(np.mean(cds))
    # metric is squared pixels; the band is on the displacement in pixels
    assert 0.0 < mean_cd and math.sqrt(mean_cd) < 5.0


def test_invalid_config():
    with pytest.raises(ValueError):
        HanddrawConfig(translation_sigma=-0.1)
    with pytest.raises(ValueError):
        HanddrawConfig(points_per_stroke=1)


# ---------------------------------------------------------------------------
# pyramid
# ---------------------------------------------------------------------------

def test_pyramid_dims_128():
    img = rasterize(hd_sketch(), 128, 128)
    pyr = build_pyramid(img)
    assert [lvl.shape[0] for lvl in pyr] == [128, 64, 32, 16, 8]


def test_pyramid_constant_fixpoint():
    img = np.full((64, 64), 0.37, dtype=np.float32)
    for lvl in build_pyramid(img):
        assert np.allclose(lvl, 0.37, atol=1e-6)


def test_pyramid_mean_preservation():
    img = rasterize(hd_sketch(), 128, 128)
    pyr = build_pyramid(img)
    m0 = pyr[0].mean()
    for lvl in pyr:
        assert abs(float(lvl.mean()) - float(m0)) < 1e-5


def test_pyramid_single_pixel():
    img = np.zeros((128, 128), dtype=np.float32)
    img[37, 101] = 1.0
    top = build_pyramid(img)[4]
    nz = np.nonzero(top)
    assert len(nz[0]) == 1
    assert top[nz] == pytest.approx(1.0 / 256.0)


def test_pyramid_source_not_mutated():
    img = rasterize(hd_sketch(), 128, 128)
    ref = img.copy()
    build_pyramid(img)
    assert np.array_equal(img, ref)


def test_pyramid_indivisible():
    with pytest.raises(IndivisibleDimsError):
        build_pyramid(np.zeros((100, 100), dtype=np.float32))


# ---------------------------------------------------------------------------
# PGM I/O
# ---------------------------------------------------------------------------

def test_pgm_roundtrip(tmp_path):
    img = np.clip(np.random.default_rng(0).random((32, 48)), 0, 1).astype(np.float32)
    path = tmp_path / "x.pgm"
    write_pgm(img, path)
    back = read_pgm(path)
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 1.0 / 255 + 1e-7


def test_pgm_binary_image_exact(tmp_path):
    img = rasterize(hd_sketch(), 64, 64)
    path = tmp_path / "b.pgm"
    write_pgm(img, path)
    assert np.array_equal(read_pgm(path), img)


def test_pgm_all_zero_body(tmp_path):
    path = tmp_path / "z.pgm"
    write_pgm(np.zeros((4, 6), dtype=np.float32), path)
    data = path.read_bytes()
    header = b"P5\n6 4\n255\n"
    assert data == header + b"\x00" * 24


def test_pgm_truncated(tmp_path):
    path = tmp_path / "t.pgm"
    write_pgm(np.zeros((8, 8), dtype=np.float32), path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-10])
    with pytest.raises(MalformedHeaderError, match="truncated"):
        read_pgm(path)


def test_pgm_bad_magic(tmp_path):
    path = tmp_path / "m.pgm"
    path.write_bytes(b"P6\n2 2\n255\n" + b"\x00" * 12)
    with pytest.raises(MalformedHeaderError):
        read_pgm(path)


def test_pgm_bytes_deterministic(tmp_path):
    img = rasterize(hd_sketch(), 64, 64)
    a, b = tmp_path / "a.pgm", tmp_path / "b.pgm"
    write_pgm(img, a)
    write_pgm(img, b)
    assert a.read_bytes() == b.read_bytes()
