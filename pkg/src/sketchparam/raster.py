"""Explicit (non-differentiable) rasterization of sketches to binary images,
hand-drawn stroke synthesis, multiscale pyramids, and PGM image files.

Images are float32 arrays of shape (h, w) with foreground = 1. A normalized
coordinate v maps to pixel index v * (dim - 1); rows are y, columns are x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .primitives import Primitive, Sketch

COLLINEAR_EPS = 1e-9
PYRAMID_LEVELS = 5


class CollinearError(ValueError):
    """Raised when three arc control points do not define a circle."""


class IndivisibleDimsError(ValueError):
    """Raised when image dims cannot support the 5-level pyramid."""


class MalformedHeaderError(ValueError):
    """Raised for corrupt or truncated PGM files."""


def circumcircle(a, b, c):
    """Circle through three points plus the signed sweep a -> c via b.

    Returns ((cx, cy), radius, sweep) with sweep in (-2*pi, 2*pi); positive
    sweep is counterclockwise in the coordinate frame. Raises CollinearError
    when the cross product of (b - a, c - a) is below 1e-9.
    """
    ax, ay = a
    bx, by = b
    cx, cy = c
    cross = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    if abs(cross) < COLLINEAR_EPS:
        raise CollinearError("arc control points are collinear")
    d = 2.0 * cross
    a2, b2, c2 = ax * ax + ay * ay, bx * bx + by * by, cx * cx + cy * cy
    ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d
    uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d
    radius = math.hypot(ax - ux, ay - uy)
    ta = math.atan2(ay - uy, ax - ux)
    tb = math.atan2(by - uy, bx - ux)
    tc = math.atan2(cy - uy, cx - ux)
    two_pi = 2.0 * math.pi
    ccw_to_b = (tb - ta) % two_pi
    ccw_to_c = (tc - ta) % two_pi
    sweep = ccw_to_c if ccw_to_b <= ccw_to_c else ccw_to_c - two_pi
    return (ux, uy), radius, sweep


def _px(v: float, dim: int) -> int:
    # half-up rounding; avoids banker's-rounding surprises at .5 ties
    return int(math.floor(v * (dim - 1) + 0.5))


def _draw_segment(img, x0, y0, x1, y1):
    """Bresenham line between integer pixel endpoints, clipped to the image."""
    h, w = img.shape
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        if 0 <= y0 < h and 0 <= x0 < w:
            img[y0, x0] = 1.0
        if x0 == x1 and y0 == y1:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def _stamp_point(img, x, y):
    h, w = img.shape
    cx, cy = _px(x, w), _px(y, h)
    img[max(0, cy - 1) : min(h, cy + 2), max(0, cx - 1) : min(w, cx + 2)] = 1.0


def _stamp_ring(img, cx, cy, radius, theta0=None, sweep=None):
    """Stamp a 1-px circle (or arc sector of it) via an exact annulus test.

    Works in an isotropic frame scaled by (w - 1); every pixel is classified
    independently, so the stamp is bitwise mirror-symmetric whenever the
    curve is.
    """
    h, w = img.shape
    sx = float(w - 1)
    sy = float(h - 1)
    aspect = sx / sy if sy > 0 else 1.0
    pcx, pcy, pr = cx * sx, cy * sx, radius * sx
    half = 0.5
    x_lo = max(0, int(math.floor(pcx - pr - 1)))
    x_hi = min(w - 1, int(math.ceil(pcx + pr + 1)))
    y_lo = max(0, int(math.floor(pcy / aspect - pr / aspect - 1)))
    y_hi = min(h - 1, int(math.ceil(pcy / aspect + pr / aspect + 1)))
    if x_lo > x_hi or y_lo > y_hi:
        return
    cols = np.arange(x_lo, x_hi + 1, dtype=np.float64)
    rows = np.arange(y_lo, y_hi + 1, dtype=np.float64)
    dx = cols[None, :] - pcx
    dy = rows[:, None] * aspect - pcy
    dist = np.hypot(dx, dy)
    mask = np.abs(dist - pr) <= half
    if sweep is not None:
        two_pi = 2.0 * math.pi
        rel = (np.arctan2(dy, dx) - theta0) * math.copysign(1.0, sweep)
        rel = np.mod(rel, two_pi)
        tol = half / max(pr, 1.0)  # half-pixel angular slack at the ends
        mask &= (rel <= abs(sweep) + tol) | (rel >= two_pi - tol)
    region = img[y_lo : y_hi + 1, x_lo : x_hi + 1]
    region[mask] = 1.0


def _stamp_primitive(img, prim: Primitive):
    h, w = img.shape
    if prim.kind == "line":
        xs, ys, xe, ye = prim.params
        _draw_segment(img, _px(xs, w), _px(ys, h), _px(xe, w), _px(ye, h))
    elif prim.kind == "circle":
        xc, yc, r = prim.params
        _stamp_ring(img, xc, yc, r)
    elif prim.kind == "arc":
        xs, ys, xm, ym, xe, ye = prim.params
        try:
            (cx, cy), radius, sweep = circumcircle((xs, ys), (xm, ym), (xe, ye))
        except CollinearError:
            _draw_segment(img, _px(xs, w), _px(ys, h), _px(xe, w), _px(ye, h))
            return
        theta0 = math.atan2(ys - cy, xs - cx)
        _stamp_ring(img, cx, cy, radius, theta0, sweep)
    elif prim.kind == "point":
        _stamp_point(img, *prim.params)
    else:  # pragma: no cover - Primitive validates kinds
        raise ValueError(f"unknown kind {prim.kind}")


def rasterize(sketch: Sketch, width: int = 128, height: int = 128) -> np.ndarray:
    """Deterministic 1-px-stroke binary render of a sketch.

    Construction primitives render exactly like regular ones; points become
    3x3 blocks. Pixels outside the image are clipped.
    """
    img = np.zeros((height, width), dtype=np.float32)
    for prim in sketch:
        _stamp_primitive(img, prim)
    return img


@dataclass(frozen=True)
class HanddrawConfig:
    """Stroke perturbation model for synthetic hand-drawn renders.

    Each primitive is independently translated and rotated about its
    centroid, then (when gp_amplitude > 0) resampled as a polyline whose
    per-axis displacement follows a squared-exponential Gaussian process
    over arclength in normalized sketch units.
    """

    translation_sigma: float = 0.02
    rotation_sigma_deg: float = 3.0
    gp_lengthscale: float = 0.1
    gp_amplitude: float = 0.01
    points_per_stroke: int = 64
    seed: int = 0

    def __post_init__(self):
        if min(self.translation_sigma, self.rotation_sigma_deg,
               self.gp_lengthscale, self.gp_amplitude) < 0:
            raise ValueError("perturbation magnitudes must be non-negative")
        if self.points_per_stroke < 2:
            raise ValueError("points_per_stroke must be >= 2")


def _sample_curve(prim: Primitive, n: int) -> np.ndarray:
    """(n, 2) points along the primitive's curve, in normalized coords."""
    if prim.kind == "line":
        xs, ys, xe, ye = prim.params
        t = np.linspace(0.0, 1.0, n)
        return np.stack([xs + (xe - xs) * t, ys + (ye - ys) * t], axis=1)
    if prim.kind == "circle":
        xc, yc, r = prim.params
        theta = np.linspace(0.0, 2.0 * math.pi, n)
        return np.stack([xc + r * np.cos(theta), yc + r * np.sin(theta)], axis=1)
    if prim.kind == "arc":
        xs, ys, xm, ym, xe, ye = prim.params
        try:
            (cx, cy), radius, sweep = circumcircle((xs, ys), (xm, ym), (xe, ye))
        except CollinearError:
            t = np.linspace(0.0, 1.0, n)
            return np.stack([xs + (xe - xs) * t, ys + (ye - ys) * t], axis=1)
        theta0 = math.atan2(ys - cy, xs - cx)
        theta = theta0 + np.linspace(0.0, sweep, n)
        return np.stack(
            [cx + radius * np.cos(theta), cy + radius * np.sin(theta)], axis=1
        )
    raise ValueError(f"cannot sample curve for kind {prim.kind}")


def _gp_displacement(u: np.ndarray, lengthscale, amplitude, rng) -> np.ndarray:
    """Draw one GP sample per axis over arclength positions u; (n, 2)."""
    diff = u[:, None] - u[None, :]
    cov = amplitude**2 * np.exp(-(diff**2) / (2.0 * lengthscale**2))
    cov += 1e-12 * np.eye(len(u))
    chol = np.linalg.cholesky(cov)
    return np.stack(
        [chol @ rng.standard_normal(len(u)), chol @ rng.standard_normal(len(u))],
        axis=1,
    )


def _draw_polyline(img, pts: np.ndarray):
    h, w = img.shape
    px = [(_px(x, w), _px(y, h)) for x, y in pts]
    for (x0, y0), (x1, y1) in zip(px[:-1], px[1:]):
        _draw_segment(img, x0, y0, x1, y1)


def synthesize_handdrawn(
    sketch: Sketch, cfg: HanddrawConfig, width: int = 128, height: int = 128
) -> np.ndarray:
    """Render a sketch with hand-drawn-style perturbations.

    Fully deterministic given cfg.seed; with all perturbation magnitudes at
    zero the output is bit-identical to :func:`rasterize`. Points keep their
    glyph rendering and receive rigid perturbation only.
    """
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    img = np.zeros((height, width), dtype=np.float32)
    for prim in sketch:
        dx, dy = rng.normal(0.0, cfg.translation_sigma, size=2)
        theta = math.radians(rng.normal(0.0, cfg.rotation_sigma_deg))
        p = prim
        if theta != 0.0:
            p = p.rotated(theta, *p.centroid())
        if dx != 0.0 or dy != 0.0:
            p = p.translated(dx, dy)
        if cfg.gp_amplitude == 0.0 or p.kind == "point":
            _stamp_primitive(img, p)
            continue
        pts = _sample_curve(p, cfg.points_per_stroke)
        seg = np.hypot(*np.diff(pts, axis=0).T)
        u = np.concatenate([[0.0], np.cumsum(seg)])  # arclength, absolute units
        pts = pts + _gp_displacement(u, cfg.gp_lengthscale, cfg.gp_amplitude, rng)
        _draw_polyline(img, pts)
    return img


def build_pyramid(img: np.ndarray) -> list[np.ndarray]:
    """Five-level pyramid via repeated 2x2 mean pooling; level 0 is the input."""
    h, w = img.shape
    if h % 2 ** (PYRAMID_LEVELS - 1) or w % 2 ** (PYRAMID_LEVELS - 1):
        raise IndivisibleDimsError(
            f"image dims {h}x{w} must be divisible by {2 ** (PYRAMID_LEVELS - 1)}"
        )
    levels = [img]
    cur = img
    for _ in range(PYRAMID_LEVELS - 1):
        ch, cw = cur.shape
        cur = cur.reshape(ch // 2, 2, cw // 2, 2).mean(axis=(1, 3))
        levels.append(cur)
    return levels


def write_pgm(img: np.ndarray, path) -> None:
    """Write a binary PGM (P5, maxval 255); pixel byte = round(value * 255)."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {arr.shape}")
    h, w = arr.shape
    data = np.floor(arr * 255.0 + 0.5).clip(0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM written by write_pgm; values rescaled to [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    pos = 0

    def next_token():
        nonlocal pos
        while pos < len(blob):
            ch = blob[pos : pos + 1]
            if ch == b"#":
                while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise MalformedHeaderError("unexpected end of header")
        return blob[start:pos]

    if next_token() != b"P5":
        raise MalformedHeaderError("not a binary PGM (missing P5 magic)")
    try:
        w, h, maxval = int(next_token()), int(next_token()), int(next_token())
    except ValueError as exc:
        raise MalformedHeaderError("non-numeric header field") from exc
    if maxval != 255:
        raise MalformedHeaderError(f"unsupported maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    payload = blob[pos : pos + w * h]
    if len(payload) != w * h:
        raise MalformedHeaderError(
            f"truncated payload: expected {w * h} bytes, got {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w)
    return (arr.astype(np.float32)) / 255.0
