"""JSON Lines sketch dataset I/O.

One record per line: {"kind": ..., "params": [...], "construction": ...}
objects under a "primitives" key. Parsing is strict: unknown kinds and
malformed records are rejected with the offending line number.
"""

from __future__ import annotations

import json
from pathlib import Path

from .primitives import KINDS, PARAM_COUNT, Primitive, Sketch


class MalformedLineError(ValueError):
    """Raised for records that are not valid sketch objects."""


class UnknownKindError(ValueError):
    """Raised for primitive kinds outside the supported set."""


def sketch_to_obj(sketch: Sketch) -> dict:
    return {
        "primitives": [
            {
                "kind": p.kind,
                "params": list(p.params),
                "construction": p.construction,
            }
            for p in sketch
        ]
    }


def sketch_from_obj(obj: dict, lineno: int = 0) -> Sketch:
    where = f"line {lineno}"
    if not isinstance(obj, dict) or "primitives" not in obj:
        raise MalformedLineError(f"{where}: missing 'primitives' key")
    prims = []
    for rec in obj["primitives"]:
        if not isinstance(rec, dict):
            raise MalformedLineError(f"{where}: primitive record is not an object")
        kind = rec.get("kind")
        if kind not in KINDS:
            raise UnknownKindError(f"{where}: unknown primitive kind {kind!r}")
        params = rec.get("params")
        if not isinstance(params, list) or len(params) != PARAM_COUNT[kind]:
            raise MalformedLineError(
                f"{where}: {kind} expects {PARAM_COUNT[kind]} params"
            )
        try:
            values = tuple(float(v) for v in params)
        except (TypeError, ValueError) as exc:
            raise MalformedLineError(f"{where}: non-numeric parameter") from exc
        construction = rec.get("construction", False)
        if not isinstance(construction, bool):
            raise MalformedLineError(f"{where}: construction flag must be boolean")
        prims.append(Primitive(kind, values, construction))
    return Sketch(tuple(prims))


def serialize_dataset(sketches, path) -> None:
    """Write sketches as UTF-8 JSON Lines, one record per sketch."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for sketch in sketches:
            fh.write(json.dumps(sketch_to_obj(sketch)) + "\n")


def parse_dataset(path) -> list[Sketch]:
    """Read a JSON Lines sketch file; the exact inverse of serialize_dataset."""
    path = Path(path)
    sketches = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLineError(f"line {lineno}: invalid JSON") from exc
            sketches.append(sketch_from_obj(obj, lineno))
    return sketches
