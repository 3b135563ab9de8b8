"""Converters from heterogeneous public-dataset formats into LabeledCloud.

Supported inputs: whitespace/comma delimited text (``ascii-xyz``/``csv``)
and PLY (ascii or binary little-endian). Missing label columns are filled
with -1.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import _ply
from .cloud import UNLABELED, LabeledCloud
from .errors import ParseError, SchemaError

TEXT_FORMATS = ("ascii-xyz", "csv")
FORMATS = TEXT_FORMATS + ("ply",)

# Default column maps: text formats index columns, PLY names properties.
_TEXT_DEFAULT = {"x": 0, "y": 1, "z": 2}
_PLY_DEFAULT = {"x": "x", "y": "y", "z": "z",
                "semantic": "semantic", "instance": "instance",
                "red": "red", "green": "green", "blue": "blue"}

_LABEL_FIELDS = ("semantic", "instance")
_COLOR_FIELDS = ("red", "green", "blue")


def convert(input_path, format: str, column_map: dict | None = None) -> LabeledCloud:
    """Parse a point cloud file into a LabeledCloud.

    ``column_map`` maps field names (x, y, z, semantic, instance,
    red, green, blue) to zero-based column indices for text formats or to
    property names for PLY. Coordinates are required, everything else is
    optional.
    """
    path = Path(input_path)
    if format in TEXT_FORMATS:
        return _convert_text(path, column_map)
    if format == "ply":
        return _convert_ply(path, column_map)
    raise SchemaError(f"unknown format {format!r}; expected one of {FORMATS}")


def _convert_text(path: Path, column_map: dict | None) -> LabeledCloud:
    cmap = dict(_TEXT_DEFAULT if column_map is None else column_map)
    for axis in "xyz":
        if axis not in cmap:
            raise SchemaError(f"column_map is missing coordinate column {axis!r}")
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            tokens = text.replace(",", " ").split()
            try:
                values = [float(tok) for tok in tokens]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise ParseError(
                    f"{path}:{lineno}: expected {width} columns, got {len(values)}")
            rows.append(values)
    table = np.array(rows, dtype=np.float64).reshape(-1, width or 0)
    n = len(table)

    def column(field, required=False):
        col = cmap.get(field)
        if col is None:
            if required:
                raise SchemaError(f"column_map is missing coordinate column {field!r}")
            return None
        if width is None or not 0 <= int(col) < width:
            raise SchemaError(
                f"{path}: column {col} for field {field!r} out of range "
                f"(file has {width or 0} columns)")
        return table[:, int(col)]

    if n == 0:
        return LabeledCloud(points=np.zeros((0, 3), dtype=np.float32))
    pts = np.stack([column(a, required=True) for a in "xyz"], axis=1)
    sem = column("semantic")
    inst = column("instance")
    color = None
    channels = [column(f) for f in _COLOR_FIELDS]
    if all(c is not None for c in channels):
        color = np.stack(channels, axis=1).astype(np.uint8)
    return LabeledCloud(
        points=pts.astype(np.float32),
        semantic=None if sem is None else sem.astype(np.int32),
        instance=None if inst is None else inst.astype(np.int32),
        color=color,
    )


def _convert_ply(path: Path, column_map: dict | None) -> LabeledCloud:
    cmap = dict(_PLY_DEFAULT)
    if column_map:
        cmap.update(column_map)
    data = _ply.read_ply(path)
    if "vertex" not in data:
        raise SchemaError(f"{path}: PLY has no vertex element")
    vert = data["vertex"]
    for axis in "xyz":
        prop = cmap[axis]
        if prop not in vert:
            raise SchemaError(f"{path}: missing coordinate property {prop!r}")
    pts = np.stack([vert[cmap[a]] for a in "xyz"], axis=1).astype(np.float32)
    n = len(pts)

    def labels(field):
        prop = cmap.get(field)
        if prop and prop in vert:
            return vert[prop].astype(np.int32)
        return np.full(n, UNLABELED, dtype=np.int32)

    color = None
    if all(cmap.get(f) in vert for f in _COLOR_FIELDS):
        color = np.stack([vert[cmap[f]] for f in _COLOR_FIELDS], axis=1).astype(np.uint8)
    return LabeledCloud(points=pts, semantic=labels("semantic"),
                        instance=labels("instance"), color=color)


def write_cloud_ply(cloud: LabeledCloud, path, binary: bool = True) -> None:
    """Write a cloud as PLY with optional color and label properties."""
    props = [("x", cloud.points[:, 0]), ("y", cloud.points[:, 1]),
             ("z", cloud.points[:, 2])]
    if cloud.color is not None:
        props += [("red", cloud.color[:, 0]), ("green", cloud.color[:, 1]),
                  ("blue", cloud.color[:, 2])]
    props += [("semantic", cloud.semantic), ("instance", cloud.instance)]
    _ply.write_ply(path, [("vertex", props, {})], binary=binary)
