"""File formats: PGM density images, legacy VTK volumes and convergence CSVs."""

from __future__ import annotations

import csv
import math
import re
from pathlib import Path

import numpy as np

from .model import GridSpec
from .optimizer import CSV_COLUMNS, ConvergenceRecord, IterationRecord

_TIMING = ("update_ms", "fea_ms")


def density_image(x, grid: GridSpec) -> np.ndarray:
    """8-bit image rows (top to bottom) with black = solid, white = void."""
    if grid.ndim != 2:
        raise ValueError("density images are 2D only; export 3D fields as VTK")
    x = np.asarray(x, dtype=float)
    if x.shape != (grid.n_elements,):
        raise ValueError(f"field has shape {x.shape}, expected ({grid.n_elements},)")
    rows = np.clip(x, 0.0, 1.0).reshape(grid.nx, grid.ny).T
    return np.rint(255.0 * (1.0 - rows)).astype(np.uint8)


def export_density_image(x, grid: GridSpec, path) -> Path:
    """Binary PGM (P5), one pixel per element."""
    img = density_image(x, grid)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{grid.nx} {grid.ny}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    header = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if header is None:
        raise ValueError("not a binary PGM file")
    width, height = int(header.group(1)), int(header.group(2))
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=header.end())
    return pixels.reshape(height, width)


def _vtk_order(grid: GridSpec) -> np.ndarray:
    """Permutation from VTK cell order (x fastest, y up) to element storage."""
    k, j, i = np.meshgrid(np.arange(grid.nz), np.arange(grid.ny), np.arange(grid.nx),
                          indexing="ij")
    iy = grid.ny - 1 - j
    return (k * grid.nx * grid.ny + i * grid.ny + iy).ravel()


def export_vtk(x, grid: GridSpec, path, name: str = "density") -> Path:
    """Legacy ASCII STRUCTURED_POINTS file with one scalar per cell."""
    if grid.ndim != 3:
        raise ValueError("VTK export is for 3D fields; use the PGM image for 2D")
    x = np.asarray(x, dtype=float)
    if x.shape != (grid.n_elements,):
        raise ValueError(f"field has shape {x.shape}, expected ({grid.n_elements},)")
    values = x[_vtk_order(grid)]
    lines = [
        "# vtk DataFile Version 3.0",
        f"{name} field",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {grid.nx + 1} {grid.ny + 1} {grid.nz + 1}",
        "ORIGIN 0 0 0",
        "SPACING 1 1 1",
        f"CELL_DATA {grid.n_elements}",
        f"SCALARS {name} double 1",
        "LOOKUP_TABLE default",
    ]
    lines.extend(repr(float(v)) for v in values)
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_vtk(path):
    """Parse a file written by :func:`export_vtk`; returns ``(grid, x)``."""
    tokens = Path(path).read_text().split("\n")
    dims = cells = None
    start = None
    for i, line in enumerate(tokens):
        if line.startswith("DIMENSIONS"):
            dims = [int(v) for v in line.split()[1:4]]
        elif line.startswith("CELL_DATA"):
            cells = int(line.split()[1])
        elif line.startswith("LOOKUP_TABLE"):
            start = i + 1
            break
    if dims is None or cells is None or start is None:
        raise ValueError("not a STRUCTURED_POINTS cell-data file")
    grid = GridSpec(dims[0] - 1, dims[1] - 1, dims[2] - 1)
    values = np.array([float(v) for v in " ".join(tokens[start:]).split()])
    if len(values) != cells or cells != grid.n_elements:
        raise ValueError("cell count does not match the dimensions")
    x = np.empty(grid.n_elements)
    x[_vtk_order(grid)] = values
    return grid, x


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    return "nan" if math.isnan(value) else repr(value)


def write_convergence_csv(record: ConvergenceRecord, path, timing: bool = True) -> Path:
    """One row per iteration under the fixed header; floats use the shortest
    round-trip representation. ``timing=False`` writes zeros in the two
    wall-clock columns so repeated runs give identical files."""
    if not len(record):
        raise ValueError("convergence record is empty")
    path = Path(path)
    fields = [f.name for f in IterationRecord.__dataclass_fields__.values()]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in record.rows:
            values = []
            for name in fields:
                value = getattr(row, name)
                if name in _TIMING and not timing:
                    value = 0.0
                values.append(_fmt(value))
            writer.writerow(values)
    return path


def read_convergence_csv(path, method: str = "") -> ConvergenceRecord:
    record = ConvergenceRecord(method)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected header {header}")
        for values in reader:
            it, obj, vf, ch, thr, act, exp, upd, fe = values
            record.append(IterationRecord(int(it), float(obj), float(vf), float(ch), float(thr),
                                          int(act), int(exp), float(upd), float(fe)))
    return record
