"""Geometric primitive domain model: typed primitives, sketches, normalization.

Coordinates live in normalized [0, 1] units once a sketch has been passed
through :func:`normalize_sketch`; raw sketches may use arbitrary units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

KINDS = ("line", "circle", "arc", "point")

# number of real-valued parameters per primitive kind
PARAM_COUNT = {"line": 4, "circle": 3, "arc": 6, "point": 2}

MAX_PRIMITIVES = 16


class ZeroExtentError(ValueError):
    """Raised when a sketch's bounding box degenerates to a single point."""


@dataclass(frozen=True)
class Primitive:
    """A single typed geometric entity with a construction flag.

    Parameter layout by kind:
      line   -> (xs, ys, xe, ye)
      circle -> (xc, yc, r)
      arc    -> (xs, ys, xm, ym, xe, ye)   start, mid, end points
      point  -> (x, y)
    """

    kind: str
    params: tuple[float, ...]
    construction: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if len(self.params) != PARAM_COUNT[self.kind]:
            raise ValueError(
                f"{self.kind} expects {PARAM_COUNT[self.kind]} params, "
                f"got {len(self.params)}"
            )
        object.__setattr__(self, "params", tuple(float(v) for v in self.params))

    @staticmethod
    def line(xs, ys, xe, ye, construction=False) -> "Primitive":
        return Primitive("line", (xs, ys, xe, ye), construction)

    @staticmethod
    def circle(xc, yc, r, construction=False) -> "Primitive":
        return Primitive("circle", (xc, yc, r), construction)

    @staticmethod
    def arc(xs, ys, xm, ym, xe, ye, construction=False) -> "Primitive":
        return Primitive("arc", (xs, ys, xm, ym, xe, ye), construction)

    @staticmethod
    def point(x, y, construction=False) -> "Primitive":
        return Primitive("point", (x, y), construction)

    def control_points(self) -> list[tuple[float, float]]:
        """The defining (x, y) pairs; for circles this is the center only."""
        if self.kind == "circle":
            return [(self.params[0], self.params[1])]
        return [
            (self.params[i], self.params[i + 1])
            for i in range(0, len(self.params), 2)
        ]

    def bounds(self) -> tuple[float, float, float, float]:
        """Axis-aligned bounding box (xmin, ymin, xmax, ymax).

        Circles use center +- r; arcs use the hull of their three control
        points (the swept curve may extend slightly beyond it).
        """
        if self.kind == "circle":
            xc, yc, r = self.params
            return (xc - r, yc - r, xc + r, yc + r)
        pts = self.control_points()
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        return (min(xs), min(ys), max(xs), max(ys))

    def transformed(self, scale: float, dx: float, dy: float) -> "Primitive":
        """Isotropic scale followed by translation; radius scales too."""
        if self.kind == "circle":
            xc, yc, r = self.params
            return Primitive(
                "circle", (xc * scale + dx, yc * scale + dy, r * scale),
                self.construction,
            )
        out = []
        for x, y in self.control_points():
            out.extend((x * scale + dx, y * scale + dy))
        return Primitive(self.kind, tuple(out), self.construction)

    def translated(self, dx: float, dy: float) -> "Primitive":
        return self.transformed(1.0, dx, dy)

    def rotated(self, theta: float, cx: float, cy: float) -> "Primitive":
        """Rotate by theta radians about (cx, cy); circles keep their radius."""
        c, s = math.cos(theta), math.sin(theta)

        def rot(x, y):
            x, y = x - cx, y - cy
            return (x * c - y * s + cx, x * s + y * c + cy)

        if self.kind == "circle":
            xc, yc, r = self.params
            return Primitive("circle", (*rot(xc, yc), r), self.construction)
        out = []
        for x, y in self.control_points():
            out.extend(rot(x, y))
        return Primitive(self.kind, tuple(out), self.construction)

    def centroid(self) -> tuple[float, float]:
        pts = self.control_points()
        return (
            sum(p[0] for p in pts) / len(pts),
            sum(p[1] for p in pts) / len(pts),
        )


@dataclass(frozen=True)
class Sketch:
    """An ordered collection of at most MAX_PRIMITIVES primitives."""

    primitives: tuple[Primitive, ...]

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        if len(self.primitives) > MAX_PRIMITIVES:
            raise ValueError(
                f"sketch holds {len(self.primitives)} primitives, "
                f"maximum is {MAX_PRIMITIVES}"
            )

    def __len__(self):
        return len(self.primitives)

    def __iter__(self):
        return iter(self.primitives)

    def bounds(self) -> tuple[float, float, float, float]:
        if not self.primitives:
            raise ValueError("empty sketch has no bounding box")
        boxes = [p.bounds() for p in self.primitives]
        return (
            min(b[0] for b in boxes),
            min(b[1] for b in boxes),
            max(b[2] for b in boxes),
            max(b[3] for b in boxes),
        )


def normalize_sketch(sketch: Sketch, margin: float = 0.05) -> Sketch:
    """Map a sketch in arbitrary units into [margin, 1-margin]^2.

    The scale is isotropic (aspect ratio preserved) and chosen so the larger
    bounding-box axis exactly fills the margin box; the shorter axis is
    centered. A degenerate axis (zero extent) is centered at 0.5.

    Raises ZeroExtentError when the bounding box is a single point.
    """
    if not 0 <= margin < 0.5:
        raise ValueError("margin must lie in [0, 0.5)")
    xmin, ymin, xmax, ymax = sketch.bounds()
    ex, ey = xmax - xmin, ymax - ymin
    extent = max(ex, ey)
    if extent <= 0.0:
        raise ZeroExtentError("sketch bounding box has zero extent on both axes")
    scale = (1.0 - 2.0 * margin) / extent
    # center each axis inside the margin box
    dx = margin + (1.0 - 2.0 * margin - ex * scale) / 2.0 - xmin * scale
    dy = margin + (1.0 - 2.0 * margin - ey * scale) / 2.0 - ymin * scale
    return Sketch(tuple(p.transformed(scale, dx, dy) for p in sketch))
