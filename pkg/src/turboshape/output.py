"""Deterministic artifact writers: CSV tables and legacy-ASCII VTK meshes.

Floats are written with `repr`, which round-trips exactly and never depends
on locale, so rerunning a job reproduces artifacts byte for byte.  CSV uses
RFC-4180 quoting with a mandatory header row; VTK uses the legacy ASCII
format, which every viewer reads and every diff tool understands.
"""

from __future__ import annotations

import csv
import numbers
from pathlib import Path

import numpy as np


def format_cell(value) -> str:
    """One CSV cell: repr for floats, plain digits for integers."""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, numbers.Real):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows) -> Path:
    """Write a table with a header row; returns the path written."""
    path = Path(path)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
        writer.writerow([str(h) for h in header])
        for row in rows:
            writer.writerow([format_cell(v) for v in row])
    return path


def _float(x) -> str:
    return repr(float(x))


def _vector_rows(values):
    # pad 2D vectors with a zero third component
    for row in values:
        yield f"{_float(row[0])} {_float(row[1])} 0.0"


def _tensor_rows(values):
    # symmetric in-plane tensor (xx, yy, xy) as a full 3x3 block
    for xx, yy, xy in values:
        yield f"{_float(xx)} {_float(xy)} 0.0"
        yield f"{_float(xy)} {_float(yy)} 0.0"
        yield "0.0 0.0 0.0"


def _field_lines(name, values, expected, kind):
    values = np.asarray(values, dtype=float)
    if values.shape[0] != expected:
        raise ValueError(
            f"field {name!r} has {values.shape[0]} entries, expected {expected}"
        )
    if values.ndim == 1:
        yield f"SCALARS {name} double 1"
        yield "LOOKUP_TABLE default"
        for v in values:
            yield _float(v)
    elif values.ndim == 2 and values.shape[1] == 2:
        yield f"VECTORS {name} double"
        yield from _vector_rows(values)
    elif values.ndim == 2 and values.shape[1] == 3 and kind == "cell":
        yield f"TENSORS {name} double"
        yield from _tensor_rows(values)
    else:
        raise ValueError(
            f"field {name!r}: unsupported number of components {values.shape[1:]}"
        )


def write_vtk(path, mesh, point_data=None, cell_data=None,
              title="turboshape fields") -> Path:
    """Write the fitted mesh and its fields as a legacy-ASCII VTK file.

    All grid nodes are written; cells are the inside triangles only.  Point
    fields are per node, cell fields per inside triangle.  Arrays of shape
    (n,) become scalars, (n, 2) become z-padded vectors, and cell arrays of
    shape (m, 3) are treated as symmetric in-plane tensors (xx, yy, xy).
    """
    path = Path(path)
    coords = mesh.coords
    tris = mesh.inside_triangles
    lines = [
        "# vtk DataFile Version 3.0",
        str(title).splitlines()[0] if str(title) else "fields",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {coords.shape[0]} double",
    ]
    lines.extend(f"{_float(x)} {_float(y)} 0.0" for x, y in coords)
    lines.append(f"CELLS {tris.shape[0]} {4 * tris.shape[0]}")
    lines.extend(f"3 {a} {b} {c}" for a, b, c in tris)
    lines.append(f"CELL_TYPES {tris.shape[0]}")
    lines.extend("5" for _ in range(tris.shape[0]))
    if point_data:
        lines.append(f"POINT_DATA {coords.shape[0]}")
        for name, values in point_data.items():
            lines.extend(_field_lines(name, values, coords.shape[0], "point"))
    if cell_data:
        lines.append(f"CELL_DATA {tris.shape[0]}")
        for name, values in cell_data.items():
            lines.extend(_field_lines(name, values, tris.shape[0], "cell"))
    path.write_text("\n".join(lines) + "\n")
    return path
