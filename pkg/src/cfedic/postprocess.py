"""Sampling, line cuts and export of displacement and strain fields."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image

from .mesh import ElementPatchConnectivity
from .shapes import shape_table

_CHUNK = 65536


@dataclass(frozen=True, eq=False)
class FieldGrid:
    """Field samples at physical points.

    ``values`` is ``(n, len(components))``; ``shape`` is the ``(rows, cols)``
    layout when the points form a raster (needed for PNG export).
    """

    points: np.ndarray
    values: np.ndarray
    components: tuple
    shape: tuple | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        object.__setattr__(self, "values", vals)
        if vals.shape[1] != len(self.components):
            raise ValueError("values and component labels disagree")

    def component(self, name: str) -> np.ndarray:
        return self.values[:, self.components.index(name)]

    def select(self, name: str) -> "FieldGrid":
        return FieldGrid(self.points, self.component(name), (name,), self.shape)


def interpolate(conn: ElementPatchConnectivity, nodal: np.ndarray, points, derivatives: bool = False):
    """Evaluate a nodal field ``(n_nodes, c)`` at physical points.

    Returns values ``(n, c)`` and, with ``derivatives``, physical gradients
    ``(n, c, 2)`` as ``d/dx, d/dy``.
    """
    nodal = np.asarray(nodal, dtype=float).reshape(conn.n_nodes, -1)
    mesh = conn.mesh
    e, xi = mesh.locate(points)
    gid, row = conn.element_group()
    vals = np.empty((len(e), nodal.shape[1]))
    grads = np.empty((len(e), nodal.shape[1], 2)) if derivatives else None
    scale = 2.0 / mesh.element_size  # J^-1 of the regular-grid map
    for g, grp in enumerate(conn.groups):
        sel = np.flatnonzero(gid[e] == g)
        if len(sel) == 0:
            continue
        uniq, inv = np.unique(xi[sel], axis=0, return_inverse=True)
        inv = inv.ravel()
        table = shape_table(conn.kind, grp.topology, uniq, cache=len(uniq) <= 4096)
        for lo in range(0, len(sel), _CHUNK):
            part = sel[lo : lo + _CHUNK]
            iv = inv[lo : lo + _CHUNK]
            uk = nodal[grp.node_ids[row[e[part]]]]  # (m, K, c)
            vals[part] = np.einsum("mk,mkc->mc", table.values[iv], uk)
            if derivatives:
                grads[part] = scale * np.einsum("mkd,mkc->mcd", table.grads[iv], uk)
    return (vals, grads) if derivatives else vals


def sample_displacement(solution, points, shape=None) -> FieldGrid:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    vals = interpolate(solution.conn, solution.nodal, pts)
    return FieldGrid(pts, vals, ("u", "v"), shape)


def compute_strain(solution, points, shape=None) -> FieldGrid:
    """Small-strain components ``exx, eyy, exy`` (y points down)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    _, grad = interpolate(solution.conn, solution.nodal, pts, derivatives=True)
    exx = grad[:, 0, 0]
    eyy = grad[:, 1, 1]
    exy = 0.5 * (grad[:, 0, 1] + grad[:, 1, 0])
    return FieldGrid(pts, np.column_stack([exx, eyy, exy]), ("exx", "eyy", "exy"), shape)


def pixel_grid(zoi, step: float = 1.0):
    """Raster of sample points covering the ZoI (inclusive) and its shape."""
    xs = np.arange(zoi.x0, zoi.x1 + 1e-9, step, dtype=float)
    ys = np.arange(zoi.y0, zoi.y1 + 1e-9, step, dtype=float)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()]), (len(ys), len(xs))


@dataclass(frozen=True, eq=False)
class LineCut:
    axis: str  # "row" (constant y) or "column" (constant x)
    offset: float
    spacing: float
    coords: np.ndarray  # (n, 2) physical sample points
    values: np.ndarray  # (n,)

    @property
    def positions(self) -> np.ndarray:
        """Coordinate along the cut."""
        return self.coords[:, 0] if self.axis == "row" else self.coords[:, 1]


def line_cut(sampler: Callable, zoi, axis: str = "row", offset: float = 0.0, spacing: float = 1.0) -> LineCut:
    """Sample a scalar field along a row or column through the ZoI centre.

    ``sampler`` maps ``(n, 2)`` points to ``(n,)`` values; ``offset`` shifts
    the line from the centre in pixels.
    """
    cx = zoi.x0 + 0.5 * zoi.width
    cy = zoi.y0 + 0.5 * zoi.height
    if axis == "row":
        y = cy + offset
        if not zoi.y0 <= y <= zoi.y1:
            raise ValueError(f"row offset {offset} leaves the ZoI")
        xs = np.arange(zoi.x0, zoi.x1 + 1e-9, spacing, dtype=float)
        coords = np.column_stack([xs, np.full_like(xs, y)])
    elif axis == "column":
        x = cx + offset
        if not zoi.x0 <= x <= zoi.x1:
            raise ValueError(f"column offset {offset} leaves the ZoI")
        ys = np.arange(zoi.y0, zoi.y1 + 1e-9, spacing, dtype=float)
        coords = np.column_stack([np.full_like(ys, x), ys])
    else:
        raise ValueError("axis must be 'row' or 'column'")
    return LineCut(axis, float(offset), float(spacing), coords, np.asarray(sampler(coords), dtype=float).ravel())


def export_field(field: FieldGrid, fmt: str, path) -> list[Path]:
    """Write ``csv`` (long format) or ``png`` heatmaps with JSON sidecars.

    PNG export writes one 8-bit grayscale image per component; the sidecar
    records the linear colour-map limits.
    """
    path = Path(path)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "component", "value"])
            for (x, y), row in zip(field.points, field.values):
                for name, val in zip(field.components, row):
                    w.writerow([repr(float(x)), repr(float(y)), name, repr(float(val))])
        return [path]
    if fmt == "png":
        if field.shape is None:
            raise ValueError("PNG export needs a raster field (shape is None)")
        written = []
        for i, name in enumerate(field.components):
            target = path if len(field.components) == 1 else path.with_name(f"{path.stem}_{name}{path.suffix}")
            img = field.values[:, i].reshape(field.shape)
            lo, hi = float(img.min()), float(img.max())
            span = hi - lo
            norm = np.zeros_like(img) if span == 0 else (img - lo) / span
            Image.fromarray(np.round(norm * 255).astype(np.uint8), mode="L").save(target)
            side = target.with_suffix(".json")
            side.write_text(json.dumps({"component": name, "min": lo, "max": hi, "colormap": "gray-linear"}, indent=2))
            written += [target, side]
        return written
    raise ValueError(f"unknown export format {fmt!r}")


def read_field_csv(path) -> FieldGrid:
    """Inverse of CSV :func:`export_field` (raster shape is not restored)."""
    rows = {}
    names: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            key = (float(rec["x"]), float(rec["y"]))
            if rec["component"] not in names:
                names.append(rec["component"])
            rows.setdefault(key, {})[rec["component"]] = float(rec["value"])
    pts = np.array(list(rows.keys()), dtype=float).reshape(-1, 2)
    vals = np.array([[r[n] for n in names] for r in rows.values()], dtype=float).reshape(len(pts), len(names))
    return FieldGrid(pts, vals, tuple(names))
