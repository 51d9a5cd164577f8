import math

import numpy as np
import pytest

from sketchparam.primitives import (
    Primitive,
    Sketch,
    ZeroExtentError,
    normalize_sketch,
)


def square(lo, hi):
    return Sketch((
        Primitive.line(lo, lo, hi, lo),
        Primitive.line(hi, lo, hi, hi),
        Primitive.line(hi, hi, lo, hi),
        Primitive.line(lo, hi, lo, lo),
    ))


def test_normalize_square_with_margin():
    out = normalize_sketch(square(0, 10), margin=0.05)
    xmin, ymin, xmax, ymax = out.bounds()
    assert math.isclose(xmin, 0.05) and math.isclose(ymin, 0.05)
    assert math.isclose(xmax, 0.95) and math.isclose(ymax, 0.95)


def test_normalize_degenerate_axis_centered():
    out = normalize_sketch(Sketch((Primitive.line(0, 0, 4, 0),)), margin=0.0)
    assert out.primitives[0].params == (0.0, 0.5, 1.0, 0.5)


def test_normalize_idempotent():
    once = normalize_sketch(square(2, 9), margin=0.05)
    twice = normalize_sketch(once, margin=0.05)
    for a, b in zip(once, twice):
        assert np.allclose(a.params, b.params, atol=1e-12)


def test_normalize_zero_extent():
    with pytest.raises(ZeroExtentError):
        normalize_sketch(Sketch((Primitive.point(3, 3),)), margin=0.05)


def test_normalize_scales_radius():
    sk = Sketch((Primitive.circle(5, 5, 2), Primitive.line(0, 0, 10, 10)))
    out = normalize_sketch(sk, margin=0.0)
    assert math.isclose(out.primitives[0].params[2], 0.2)


def test_normalize_rejects_bad_margin():
    with pytest.raises(ValueError):
        normalize_sketch(square(0, 1), margin=0.5)


def test_primitive_validation():
    with pytest.raises(ValueError):
        Primitive("spline", (0, 0, 1, 1))
    with pytest.raises(ValueError):
        Primitive("line", (0, 0, 1))


def test_circle_bounds_include_radius():
    c = Primitive.circle(0.5, 0.5, 0.3)
    assert c.bounds() == (0.2, 0.2, 0.8, 0.8)


def test_rotation_preserves_circle_radius():
    c = Primitive.circle(0.4, 0.4, 0.2)
    r = c.rotated(math.pi / 3, 0.1, 0.1)
    assert math.isclose(r.params[2], 0.2)


def test_rotation_about_centroid_fixes_centroid():
    line = Primitive.line(0.2, 0.2, 0.8, 0.6)
    cx, cy = line.centroid()
    rot = line.rotated(1.0, cx, cy)
    rcx, rcy = rot.centroid()
    assert math.isclose(cx, rcx, abs_tol=1e-12)
    assert math.isclose(cy, rcy, abs_tol=1e-12)


def test_sketch_len_cap():
    prims = tuple(Primitive.point(0.1, 0.1) for _ in range(17))
    with pytest.raises(ValueError):
        Sketch(prims)
