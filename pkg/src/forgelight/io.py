"""Tabular and visualization exports: CSV with header rows, legacy VTK."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .mesh import Mesh


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def write_records(path, records: list[dict], header=None) -> Path:
    header = list(header or (records[0].keys() if records else []))
    return write_csv(path, header, ([r.get(k, "") for k in header] for r in records))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    return v


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_element_values(path, columns: dict) -> Path:
    """One row per element: ``element`` index then each named column."""
    names = list(columns)
    arrays = [np.asarray(columns[n]) for n in names]
    n = len(arrays[0])
    return write_csv(path, ["element"] + names, ([i] + [a[i] for a in arrays] for i in range(n)))


def write_vtk(mesh: Mesh, path, cell_data: dict | None = None, point_data: dict | None = None,
              title: str = "forgelight") -> Path:
    """Legacy ASCII unstructured grid (tetra = 10, quad = 9)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    nodes = mesh.nodes if mesh.dim == 3 else np.column_stack([mesh.nodes, np.zeros(mesh.n_nodes)])
    els = mesh.elements
    ctype = 10 if mesh.dim == 3 else 9
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(nodes)} double"]
    lines += [" ".join(repr(float(c)) for c in p) for p in nodes]
    npe = els.shape[1]
    lines.append(f"CELLS {len(els)} {len(els) * (npe + 1)}")
    lines += [f"{npe} " + " ".join(str(int(i)) for i in e) for e in els]
    lines.append(f"CELL_TYPES {len(els)}")
    lines += [str(ctype)] * len(els)
    for block, data, count in (("CELL_DATA", cell_data, len(els)),
                               ("POINT_DATA", point_data, len(nodes))):
        if not data:
            continue
        lines.append(f"{block} {count}")
        for name, vals in data.items():
            vals = np.asarray(vals, dtype=float)
            if vals.ndim == 1:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [repr(float(v)) for v in vals]
            else:
                lines.append(f"VECTORS {name} double")
                lines += [" ".join(repr(float(c)) for c in v) for v in vals]
    path.write_text("\n".join(lines) + "\n")
    return path
