"""Legacy ASCII VTK unstructured-grid export (and a reader for validation)."""

from __future__ import annotations

import numpy as np

from .errors import ParseError

CELL_TYPES = {
    "line": 3,
    "triangle": 5,
    "quad": 9,
    "tetra": 10,
    "hexahedron": 12,
    "quadratic_triangle": 22,
    "quadratic_tetra": 24,
}

ETYPE_TO_VTK = {
    ("q1", 2): 9, ("q1", 3): 12,
    ("p1", 2): 5, ("p1", 3): 10,
    ("p2", 2): 22, ("p2", 3): 24,
}


def write_unstructured_grid(
    path,
    points: np.ndarray,
    cells: np.ndarray,
    cell_type: int,
    point_data: dict | None = None,
    cell_data: dict | None = None,
    title: str = "porohom output",
) -> None:
    """Write one homogeneous-cell unstructured grid.

    point_data values may be (n,) scalars or (n, 2|3) vectors; 2D data is
    zero-padded to 3 components."""
    points = np.asarray(points, dtype=float)
    if points.shape[1] == 2:
        points = np.column_stack([points, np.zeros(len(points))])
    cells = np.asarray(cells, dtype=int)
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(title[:250] + "\n")
        f.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {len(points)} double\n")
        for p in points:
            f.write(f"{p[0]:.12g} {p[1]:.12g} {p[2]:.12g}\n")
        k = cells.shape[1]
        f.write(f"CELLS {len(cells)} {len(cells) * (k + 1)}\n")
        for c in cells:
            f.write(str(k) + " " + " ".join(str(i) for i in c) + "\n")
        f.write(f"CELL_TYPES {len(cells)}\n")
        for _ in range(len(cells)):
            f.write(f"{cell_type}\n")
        if point_data:
            f.write(f"POINT_DATA {len(points)}\n")
            for name, arr in point_data.items():
                arr = np.asarray(arr, dtype=float)
                if arr.ndim == 1:
                    f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                    for v in arr:
                        f.write(f"{v:.12g}\n")
                else:
                    if arr.shape[1] == 2:
                        arr = np.column_stack([arr, np.zeros(len(arr))])
                    f.write(f"VECTORS {name} double\n")
                    for v in arr:
                        f.write(f"{v[0]:.12g} {v[1]:.12g} {v[2]:.12g}\n")
        if cell_data:
            f.write(f"CELL_DATA {len(cells)}\n")
            for name, arr in cell_data.items():
                arr = np.asarray(arr, dtype=float)
                f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                for v in arr:
                    f.write(f"{v:.12g}\n")


def read_unstructured_grid(path) -> dict:
    """Format-level reader used to validate written files."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].startswith("# vtk DataFile"):
        raise ParseError(f"{path}: missing VTK header")
    if len(lines) < 4 or lines[2].strip() != "ASCII":
        raise ParseError(f"{path}: not an ASCII VTK file")
    if lines[3].strip() != "DATASET UNSTRUCTURED_GRID":
        raise ParseError(f"{path}: not an unstructured grid")
    i = 4
    out: dict = {"point_data": {}, "cell_data": {}}

    def tokens(row):
        return lines[row].split()

    while i < len(lines):
        t = tokens(i)
        if not t:
            i += 1
            continue
        key = t[0]
        if key == "POINTS":
            n = int(t[1])
            pts = np.array(
                [[float(x) for x in tokens(i + 1 + j)] for j in range(n)]
            )
            out["points"] = pts
            i += 1 + n
        elif key == "CELLS":
            n, total = int(t[1]), int(t[2])
            cells = []
            for j in range(n):
                row = [int(x) for x in tokens(i + 1 + j)]
                if row[0] != len(row) - 1:
                    raise ParseError(f"{path}: bad cell row {j}")
                cells.append(row[1:])
            out["cells"] = np.array(cells, dtype=int)
            if total != sum(len(c) + 1 for c in cells):
                raise ParseError(f"{path}: CELLS size field mismatch")
            i += 1 + n
        elif key == "CELL_TYPES":
            n = int(t[1])
            out["cell_types"] = np.array(
                [int(lines[i + 1 + j]) for j in range(n)], dtype=int
            )
            i += 1 + n
        elif key in ("POINT_DATA", "CELL_DATA"):
            count = int(t[1])
            section = "point_data" if key == "POINT_DATA" else "cell_data"
            i += 1
            while i < len(lines):
                t2 = tokens(i)
                if not t2:
                    i += 1
                    continue
                if t2[0] == "SCALARS":
                    name = t2[1]
                    i += 2  # skip LOOKUP_TABLE
                    vals = np.array([float(lines[i + j]) for j in range(count)])
                    out[section][name] = vals
                    i += count
                elif t2[0] == "VECTORS":
                    name = t2[1]
                    i += 1
                    vals = np.array(
                        [[float(x) for x in tokens(i + j)] for j in range(count)]
                    )
                    out[section][name] = vals
                    i += count
                else:
                    break
        else:
            raise ParseError(f"{path}: unexpected section {key!r}")
    n_pts = len(out.get("points", ()))
    cells = out.get("cells")
    if cells is None or n_pts == 0:
        raise ParseError(f"{path}: missing POINTS or CELLS")
    if cells.max() >= n_pts:
        raise ParseError(f"{path}: cell index out of range")
    if len(out.get("cell_types", ())) != len(cells):
        raise ParseError(f"{path}: CELL_TYPES length mismatch")
    return out


def write_beam_network(path, network, element_values=None,
                       displacements=None, title="beam network") -> None:
    """Line-element export of an RVE with optional per-beam coloring."""
    pts = network.nodes
    if displacements is not None:
        pts = pts + displacements
    cell_data = None
    if element_values is not None:
        cell_data = {"von_mises": np.asarray(element_values, dtype=float)}
    point_data = None
    if displacements is not None:
        point_data = {"displacement": np.asarray(displacements, dtype=float)}
    write_unstructured_grid(
        path, pts, network.elements, CELL_TYPES["line"],
        point_data=point_data, cell_data=cell_data, title=title,
    )
