"""Regular quadrilateral meshes over a zone of interest and their patch connectivity.

Pixel centres sit at integer coordinates, x runs along image columns and y
along image rows (pointing down).  The ZoI origin is a mesh node.  Nodes are
numbered row-major, ``id = j * (nx + 1) + i``; elements likewise,
``e = ey * nx + ex``.  The parametric axis ``eta`` follows ``y``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .shapes import CfeParams, ElementKind, PatchTopology, element_label


@dataclass(frozen=True)
class ZoneOfInterest:
    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("ZoI width and height must be positive")

    @classmethod
    def centered(cls, image_shape, width: int, height: int) -> "ZoneOfInterest":
        rows, cols = image_shape[:2]
        return cls((cols - 1 - width) // 2, (rows - 1 - height) // 2, width, height)

    @property
    def x1(self) -> int:
        return self.x0 + self.width

    @property
    def y1(self) -> int:
        return self.y0 + self.height

    def check_fits(self, image_shape):
        rows, cols = image_shape[:2]
        if self.x0 < 0 or self.y0 < 0 or self.x1 > cols - 1 or self.y1 > rows - 1:
            raise ValueError(
                f"ZoI [{self.x0},{self.x1}]x[{self.y0},{self.y1}] does not fit inside a "
                f"{cols}x{rows} image (pixel centres 0..{cols - 1}, 0..{rows - 1})"
            )

    def contains(self, x, y, tol: float = 1e-9):
        x = np.asarray(x)
        y = np.asarray(y)
        return (x >= self.x0 - tol) & (x <= self.x1 + tol) & (y >= self.y0 - tol) & (y <= self.y1 + tol)


@dataclass(frozen=True)
class QuadMesh:
    zoi: ZoneOfInterest
    element_size: int
    nx: int
    ny: int

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def node_coords(self) -> np.ndarray:
        h = self.element_size
        ys, xs = np.meshgrid(
            self.zoi.y0 + h * np.arange(self.ny + 1), self.zoi.x0 + h * np.arange(self.nx + 1), indexing="ij"
        )
        return np.column_stack([xs.ravel(), ys.ravel()]).astype(float)

    def node_id(self, i, j):
        return np.asarray(j) * (self.nx + 1) + np.asarray(i)

    def element_origin(self, e) -> np.ndarray:
        """Top-left corner (parametric ``(-1, -1)``) of element(s) ``e``."""
        e = np.asarray(e)
        ex, ey = e % self.nx, e // self.nx
        h = self.element_size
        return np.stack([self.zoi.x0 + h * ex, self.zoi.y0 + h * ey], axis=-1).astype(float)

    def locate(self, points):
        """Containing element and parametric coordinates of physical points.

        Points on an interior edge go to the lower-index element.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if not np.all(self.zoi.contains(pts[:, 0], pts[:, 1])):
            raise ValueError("points outside the zone of interest")
        h = self.element_size
        rx = (pts[:, 0] - self.zoi.x0) / h
        ry = (pts[:, 1] - self.zoi.y0) / h
        ex = np.clip(np.ceil(rx) - 1, 0, self.nx - 1).astype(int)
        ey = np.clip(np.ceil(ry) - 1, 0, self.ny - 1).astype(int)
        xi = np.column_stack([2 * (rx - ex) - 1, 2 * (ry - ey) - 1])
        return ey * self.nx + ex, xi

    def to_physical(self, e, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float).reshape(-1, 2)
        return self.element_origin(e) + 0.5 * self.element_size * (xi + 1)


def build_mesh(zoi: ZoneOfInterest, h: int) -> QuadMesh:
    h = int(h)
    if h <= 0:
        raise ValueError("element size must be positive")
    if zoi.width % h or zoi.height % h:
        raise ValueError(
            f"element size h={h} does not divide the {zoi.width}x{zoi.height} ZoI; "
            "adjust the ZoI dimensions or the element size"
        )
    return QuadMesh(zoi, h, zoi.width // h, zoi.height // h)


@dataclass(frozen=True, eq=False)
class ElementGroup:
    """Elements sharing one patch topology (and hence one shape table)."""

    topology: PatchTopology | None
    elements: np.ndarray  # (E_t,)
    node_ids: np.ndarray  # (E_t, K_t) global node ids, in topology order


@dataclass(frozen=True, eq=False)
class ElementPatchConnectivity:
    mesh: QuadMesh
    kind: ElementKind
    node_coords: np.ndarray  # (n_nodes, 2) every DOF-carrying node
    groups: tuple

    @property
    def n_nodes(self) -> int:
        return len(self.node_coords)

    @property
    def label(self) -> str:
        return element_label(self.kind)

    @cached_property
    def _element_index(self):
        gid = np.empty(self.mesh.n_elements, dtype=int)
        row = np.empty(self.mesh.n_elements, dtype=int)
        for g, grp in enumerate(self.groups):
            gid[grp.elements] = g
            row[grp.elements] = np.arange(len(grp.elements))
        return gid, row

    def element_group(self) -> tuple[np.ndarray, np.ndarray]:
        """Group index and row within the group for every element."""
        return self._element_index

    def element_nodes(self, e: int) -> np.ndarray:
        gid, row = self.element_group()
        return self.groups[gid[e]].node_ids[row[e]]

    def topology_of(self, e: int):
        gid, _ = self.element_group()
        return self.groups[gid[e]].topology


def patch_connectivity(mesh: QuadMesh, s: int) -> dict:
    """Per-element patch lattices clipped to the mesh.

    Returns ``{PatchTopology: (elements, node_ids)}`` with one entry per
    distinct boundary-cut signature; ``node_ids`` rows follow the topology's
    lattice order (xi fastest).
    """
    if s < 0:
        raise ValueError("patch size must be >= 0")
    nx, ny = mesh.nx, mesh.ny
    lat = np.arange(-s, s + 2)

    def axis_classes(n):
        e = np.arange(n)
        cuts = np.column_stack([np.maximum(0, s - e), np.maximum(0, e + 1 + s - n)])
        classes = {}
        for idx, c in enumerate(map(tuple, cuts)):
            classes.setdefault(c, []).append(idx)
        return {c: np.array(v) for c, v in classes.items()}

    out = {}
    for cyk, eys in axis_classes(ny).items():
        laty = lat[cyk[0] : len(lat) - cyk[1]]
        for cxk, exs in axis_classes(nx).items():
            latx = lat[cxk[0] : len(lat) - cxk[1]]
            ey, ex = np.meshgrid(eys, exs, indexing="ij")
            ey, ex = ey.ravel(), ex.ravel()
            jj = ey[:, None, None] + laty[None, :, None]
            ii = ex[:, None, None] + latx[None, None, :]
            ids = mesh.node_id(ii, jj).reshape(len(ex), -1)
            out[PatchTopology(s, 2, cxk + cyk)] = (ey * nx + ex, ids)
    return out


def _q8_connectivity(mesh: QuadMesh):
    nx, ny, h = mesh.nx, mesh.ny, mesh.element_size
    n_corner = mesh.n_nodes
    n_hmid = nx * (ny + 1)
    corners = mesh.node_coords
    jh, ih = np.meshgrid(np.arange(ny + 1), np.arange(nx), indexing="ij")
    hmid = np.column_stack([mesh.zoi.x0 + h * (ih.ravel() + 0.5), mesh.zoi.y0 + h * jh.ravel()])
    jv, iv = np.meshgrid(np.arange(ny), np.arange(nx + 1), indexing="ij")
    vmid = np.column_stack([mesh.zoi.x0 + h * iv.ravel(), mesh.zoi.y0 + h * (jv.ravel() + 0.5)])
    coords = np.vstack([corners, hmid, vmid])
    e = np.arange(mesh.n_elements)
    ex, ey = e % nx, e // nx
    ids = np.column_stack(
        [
            mesh.node_id(ex, ey),
            mesh.node_id(ex + 1, ey),
            mesh.node_id(ex + 1, ey + 1),
            mesh.node_id(ex, ey + 1),
            n_corner + ey * nx + ex,
            n_corner + n_hmid + ey * (nx + 1) + ex + 1,
            n_corner + (ey + 1) * nx + ex,
            n_corner + n_hmid + ey * (nx + 1) + ex,
        ]
    )
    return coords, ids


def build_connectivity(mesh: QuadMesh, kind: ElementKind) -> ElementPatchConnectivity:
    """Element-to-node connectivity for Q4, Q8 or C-FE discretizations."""
    if isinstance(kind, CfeParams):
        groups = tuple(
            ElementGroup(t, el, ids)
            for t, (el, ids) in sorted(patch_connectivity(mesh, kind.patch_size).items(), key=lambda kv: kv[1][0][0])
        )
        return ElementPatchConnectivity(mesh, kind, mesh.node_coords, groups)
    e = np.arange(mesh.n_elements)
    if kind == "q4":
        ex, ey = e % mesh.nx, e // mesh.nx
        ids = np.column_stack(
            [mesh.node_id(ex, ey), mesh.node_id(ex + 1, ey), mesh.node_id(ex + 1, ey + 1), mesh.node_id(ex, ey + 1)]
        )
        return ElementPatchConnectivity(mesh, kind, mesh.node_coords, (ElementGroup(None, e, ids),))
    if kind == "q8":
        coords, ids = _q8_connectivity(mesh)
        return ElementPatchConnectivity(mesh, kind, coords, (ElementGroup(None, e, ids),))
    raise ValueError(f"unknown element kind {kind!r}")


def sparsity_pattern_density(conn: ElementPatchConnectivity) -> float:
    """Fraction of nonzeros in the 2x2-block system matrix implied by ``conn``."""
    import scipy.sparse as sp

    rows, cols = [], []
    for grp in conn.groups:
        k = grp.node_ids.shape[1]
        rows.append(np.repeat(grp.node_ids, k, axis=1).ravel())
        cols.append(np.tile(grp.node_ids, (1, k)).ravel())
    n = conn.n_nodes
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    pat = sp.coo_matrix((np.ones(len(r), dtype=np.int8), (r, c)), shape=(n, n)).tocsr()
    pat.sum_duplicates()
    return 4 * pat.nnz / (2 * n) ** 2


def export_mesh_csv(conn: ElementPatchConnectivity, nodes_path, elements_path):
    """Write ``id,x,y`` node rows and ``element,topology,node_ids`` element rows."""
    with open(nodes_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "x", "y"])
        for i, (x, y) in enumerate(conn.node_coords):
            w.writerow([i, repr(float(x)), repr(float(y))])
    with open(elements_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["element", "cuts", "node_ids"])
        for grp in conn.groups:
            cuts = "" if grp.topology is None else " ".join(map(str, grp.topology.cuts))
            for e, ids in zip(grp.elements, grp.node_ids):
                w.writerow([int(e), cuts, " ".join(map(str, ids))])
    return Path(nodes_path), Path(elements_path)
