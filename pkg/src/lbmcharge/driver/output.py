"""File output: VTK legacy structured points and CSV tables."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

TRAJECTORY_COLUMNS = ("step", "id", "x", "y", "z", "vx", "vy", "vz", "charge")


def write_vtk(path, fields, spacing=1.0, origin=(0.0, 0.0, 0.0), title="lbmcharge snapshot"):
    """Write cell data of equally shaped arrays as ASCII ``STRUCTURED_POINTS``.

    ``fields`` maps names to arrays of shape ``(nx, ny, nz)`` (scalars) or
    ``(nx, ny, nz, 3)`` (vectors). Cells are written x fastest. The lattice
    has ``n + 1`` points per axis so the data is attached to cells.
    """
    shape = None
    for name, a in fields.items():
        s = np.shape(a)[:3]
        if shape is None:
            shape = s
        elif s != shape:
            raise ValueError(f"field {name!r} has shape {s}, expected {shape}")
    nx, ny, nz = shape
    sp = np.broadcast_to(np.asarray(spacing, dtype=float), (3,))
    lines = [
        "# vtk DataFile Version 3.0",
        title[:255],
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx + 1} {ny + 1} {nz + 1}",
        "ORIGIN {} {} {}".format(*(repr(float(o)) for o in origin)),
        "SPACING {} {} {}".format(*(repr(float(s)) for s in sp)),
        f"CELL_DATA {nx * ny * nz}",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
        for name, a in fields.items():
            a = np.asarray(a)
            if a.ndim == 3:
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                np.savetxt(fh, a.ravel(order="F"), fmt="%.17g")
            else:
                fh.write(f"VECTORS {name} double\n")
                np.savetxt(fh, a.reshape(-1, 3, order="F"), fmt="%.17g")


def read_vtk(path):
    """Read back a file produced by :func:`write_vtk`."""
    with open(path) as fh:
        tokens = fh.read().split("\n")
    dims = next(t for t in tokens if t.startswith("DIMENSIONS")).split()[1:]
    shape = tuple(int(d) - 1 for d in dims)
    n = shape[0] * shape[1] * shape[2]
    out = {}
    i = 0
    while i < len(tokens):
        t = tokens[i].split()
        if t and t[0] == "SCALARS":
            vals = np.array([float(v) for v in tokens[i + 2 : i + 2 + n]])
            out[t[1]] = vals.reshape(shape, order="F")
            i += 2 + n
        elif t and t[0] == "VECTORS":
            vals = np.array([[float(x) for x in v.split()] for v in tokens[i + 1 : i + 1 + n]])
            out[t[1]] = vals.reshape(shape + (3,), order="F")
            i += 1 + n
        else:
            i += 1
    return out


class CsvLog:
    """Append-only CSV table with a fixed header."""

    def __init__(self, path, columns):
        self.path = Path(path)
        self.columns = tuple(columns)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(self.columns)

    def write(self, row):
        self._writer.writerow([_fmt(v) for v in row])

    def close(self):
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def trajectory_rows(step, particles):
    for i in range(len(particles)):
        x, y, z = particles.positions[i]
        vx, vy, vz = particles.velocities[i]
        yield (step, int(particles.ids[i]), x, y, z, vx, vy, vz, particles.charges[i])
