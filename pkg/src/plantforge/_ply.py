"""Minimal PLY reader/writer: ascii and binary_little_endian, scalar
properties plus one uchar-counted list property per element.

Covers the plant datasets and the labeled tree meshes this package
produces; it is not a general PLY implementation.
"""

from __future__ import annotations

import numpy as np

from .errors import ParseError

_TYPES = {
    "char": "<i1", "int8": "<i1",
    "uchar": "<u1", "uint8": "<u1",
    "short": "<i2", "int16": "<i2",
    "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4",
    "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4",
    "double": "<f8", "float64": "<f8",
}
_NAMES = {"<i1": "char", "<u1": "uchar", "<i2": "short", "<u2": "ushort",
          "<i4": "int", "<u4": "uint", "<f4": "float", "<f8": "double"}


def read_ply(path) -> dict[str, dict[str, np.ndarray]]:
    """Parse a PLY file into {element: {property: array}}.

    List properties come back as (n, width) arrays and require a constant
    width (always 3 for the triangle meshes handled here).
    """
    with open(path, "rb") as f:
        elements, binary = _read_header(f, path)
        out: dict[str, dict[str, np.ndarray]] = {}
        for name, count, props in elements:
            if binary:
                out[name] = _read_binary_element(f, count, props, path)
            else:
                out[name] = _read_ascii_element(f, count, props, path)
        return out


def _read_header(f, path):
    magic = f.readline().strip()
    if magic != b"ply":
        raise ParseError(f"{path}: not a PLY file")
    binary = None
    elements = []  # (name, count, [(prop_name, dtype, is_list)])
    while True:
        line = f.readline()
        if not line:
            raise ParseError(f"{path}: unexpected end of header")
        tokens = line.split()
        if not tokens or tokens[0] == b"comment":
            continue
        key = tokens[0]
        if key == b"format":
            fmt = tokens[1].decode()
            if fmt == "ascii":
                binary = False
            elif fmt == "binary_little_endian":
                binary = True
            else:
                raise ParseError(f"{path}: unsupported PLY format {fmt!r}")
        elif key == b"element":
            elements.append((tokens[1].decode(), int(tokens[2]), []))
        elif key == b"property":
            if not elements:
                raise ParseError(f"{path}: property before element")
            if tokens[1] == b"list":
                dtype = _TYPES[tokens[3].decode()]
                elements[-1][2].append((tokens[4].decode(), dtype, True))
            else:
                dtype = _TYPES[tokens[1].decode()]
                elements[-1][2].append((tokens[2].decode(), dtype, False))
        elif key == b"end_header":
            break
    if binary is None:
        raise ParseError(f"{path}: missing format line")
    return elements, binary


def _read_binary_element(f, count, props, path):
    if count == 0:
        return {name: np.empty(0, dtype=dt) for name, dt, _ in props}
    if not any(is_list for _, _, is_list in props):
        rec = np.dtype([(name, dt) for name, dt, _ in props])
        data = np.fromfile(f, dtype=rec, count=count)
        if len(data) != count:
            raise ParseError(f"{path}: truncated binary element")
        return {name: data[name].copy() for name, _, _ in props}
    # One list property (face layout): read the first row to fix the width.
    cols = {}
    rows = []
    for _ in range(count):
        row = {}
        for name, dt, is_list in props:
            if is_list:
                n = int(np.fromfile(f, dtype="<u1", count=1)[0])
                row[name] = np.fromfile(f, dtype=dt, count=n)
                if len(row[name]) != n:
                    raise ParseError(f"{path}: truncated list property")
            else:
                v = np.fromfile(f, dtype=dt, count=1)
                if len(v) != 1:
                    raise ParseError(f"{path}: truncated binary element")
                row[name] = v[0]
        rows.append(row)
    for name, dt, is_list in props:
        if is_list:
            width = len(rows[0][name])
            if any(len(r[name]) != width for r in rows):
                raise ParseError(f"{path}: variable-width face lists unsupported")
            cols[name] = np.stack([r[name] for r in rows]).astype(dt)
        else:
            cols[name] = np.array([r[name] for r in rows], dtype=dt)
    return cols


def _read_ascii_element(f, count, props, path):
    has_list = any(is_list for _, _, is_list in props)
    raw = []
    for i in range(count):
        line = f.readline()
        if not line:
            raise ParseError(f"{path}: truncated ascii element at row {i}")
        raw.append(line.split())
    cols = {}
    if not has_list:
        if count == 0:
            return {name: np.empty(0, dtype=dt) for name, dt, _ in props}
        table = np.array(raw, dtype=np.float64)
        if table.shape[1] != len(props):
            raise ParseError(f"{path}: ascii row width mismatch")
        for j, (name, dt, _) in enumerate(props):
            cols[name] = table[:, j].astype(dt)
        return cols
    parsed_rows = []
    for tokens in raw:
        row = {}
        pos = 0
        for name, dt, is_list in props:
            if is_list:
                n = int(tokens[pos])
                row[name] = np.array(tokens[pos + 1:pos + 1 + n], dtype=dt)
                pos += 1 + n
            else:
                row[name] = np.array(tokens[pos], dtype=dt)
                pos += 1
        parsed_rows.append(row)
    for name, dt, is_list in props:
        if is_list:
            width = len(parsed_rows[0][name]) if parsed_rows else 0
            if any(len(r[name]) != width for r in parsed_rows):
                raise ParseError(f"{path}: variable-width face lists unsupported")
            cols[name] = (np.stack([r[name] for r in parsed_rows]).astype(dt)
                          if parsed_rows else np.empty((0, 0), dtype=dt))
        else:
            cols[name] = np.array([r[name] for r in parsed_rows], dtype=dt)
    return cols


def write_ply(path, elements: list[tuple[str, list[tuple[str, np.ndarray]], dict]],
              binary: bool = True) -> None:
    """Write elements as PLY.

    ``elements`` is a list of (element_name, [(prop_name, column)], options);
    options may carry ``list_props``, the set of property names written as
    uchar-counted lists.
    """
    header = ["ply"]
    header.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
    for name, props, opts in elements:
        count = len(props[0][1]) if props else 0
        header.append(f"element {name} {count}")
        list_props = opts.get("list_props", set())
        for pname, col in props:
            dt = np.dtype(col.dtype).newbyteorder("<")
            tname = _NAMES[dt.str.replace("|", "<")]
            if pname in list_props:
                header.append(f"property list uchar {tname} {pname}")
            else:
                header.append(f"property {tname} {pname}")
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode())
        for name, props, opts in elements:
            if not props:
                continue
            list_props = opts.get("list_props", set())
            count = len(props[0][1])
            if binary:
                _write_binary_element(f, props, list_props, count)
            else:
                _write_ascii_element(f, props, list_props, count)


def _write_binary_element(f, props, list_props, count):
    fields = []
    for pname, col in props:
        dt = np.dtype(col.dtype).newbyteorder("<")
        if pname in list_props:
            width = col.shape[1]
            fields.append((pname + "__n", "<u1"))
            fields.append((pname, dt, (width,)))
        else:
            fields.append((pname, dt))
    rec = np.empty(count, dtype=np.dtype(fields))
    for pname, col in props:
        if pname in list_props:
            rec[pname + "__n"] = col.shape[1]
            rec[pname] = col
        else:
            rec[pname] = col
    rec.tofile(f)


def _write_ascii_element(f, props, list_props, count):
    for i in range(count):
        parts = []
        for pname, col in props:
            if pname in list_props:
                parts.append(str(col.shape[1]))
                parts.extend(_fmt(v) for v in col[i])
            else:
                parts.append(_fmt(col[i]))
        f.write((" ".join(parts) + "\n").encode())


def _fmt(v):
    if isinstance(v, (np.floating, float)):
        return repr(float(v))
    return str(int(v))
