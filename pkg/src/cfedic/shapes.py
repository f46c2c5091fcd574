"""Element shape functions: bilinear Q4, serendipity Q8 and convolution (C-FE).

The C-FE shape function of patch node ``k`` is

    N~_k(xi) = sum_i N_i(xi) W^i_k(xi)

where ``N_i`` are the linear hat functions of the element corners and
``W^i`` the radial-basis patch functions of corner ``i`` (see
:mod:`cfedic.kernel`).  Parametric coordinates put element corners at
``+-1`` and neighbouring mesh nodes at odd integers, so a patch of size
``s`` spans ``{-(2s+1), ..., -1, 1, ..., 2s+1}`` along each axis.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Union

import numpy as np

from .kernel import (
    KernelError,
    KernelParams,
    NodalPatch,
    build_rbf_interpolant,
    eval_patch_function_gradients,
    eval_patch_functions,
    supported_exponents,
)


@dataclass(frozen=True)
class CfeParams:
    order: int = 2
    patch_size: int = 2
    dilation: float = 8.0

    def __post_init__(self):
        KernelParams(self.order, self.dilation)
        if self.patch_size < 0:
            raise ValueError(f"patch size s must be >= 0, got {self.patch_size}")

    @property
    def kernel(self) -> KernelParams:
        return KernelParams(self.order, self.dilation)


# "q4", "q8" or a CfeParams instance
ElementKind = Union[str, CfeParams]


def element_label(kind: ElementKind) -> str:
    if isinstance(kind, CfeParams):
        return f"cfe(p={kind.order},s={kind.patch_size},a={kind.dilation:g})"
    if kind not in ("q4", "q8"):
        raise ValueError(f"unknown element kind {kind!r}")
    return kind


@dataclass(frozen=True)
class PatchTopology:
    """Lattice of patch nodes for one element, with boundary cuts.

    ``cuts`` holds the number of dropped node layers per side, ordered
    ``(xi-, xi+)`` in 1D and ``(xi-, xi+, eta-, eta+)`` in 2D.
    """

    patch_size: int
    dim: int = 2
    cuts: tuple = (0, 0, 0, 0)

    def __post_init__(self):
        if self.patch_size < 0:
            raise ValueError("patch size must be >= 0")
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        cuts = tuple(int(c) for c in self.cuts)
        if len(cuts) != 2 * self.dim:
            if all(c == 0 for c in cuts):
                cuts = (0,) * (2 * self.dim)
            else:
                raise ValueError(f"expected {2 * self.dim} cut depths, got {len(cuts)}")
        for c in cuts:
            if c < 0 or c > self.patch_size:
                raise ValueError(f"cut depth {c} outside [0, s={self.patch_size}]")
        object.__setattr__(self, "cuts", cuts)

    @property
    def axis_offsets(self) -> np.ndarray:
        s = self.patch_size
        return np.arange(-(2 * s + 1), 2 * s + 2, 2, dtype=float)

    def _axis_mask(self, axis: int) -> np.ndarray:
        n = 2 * self.patch_size + 2
        lo, hi = self.cuts[2 * axis], self.cuts[2 * axis + 1]
        mask = np.zeros(n, dtype=bool)
        mask[lo : n - hi] = True
        return mask

    @property
    def offsets(self) -> np.ndarray:
        """Full lattice, ``(n_full, dim)``, xi varying fastest."""
        ax = self.axis_offsets
        if self.dim == 1:
            return ax[:, None]
        eta, xi = np.meshgrid(ax, ax, indexing="ij")
        return np.column_stack([xi.ravel(), eta.ravel()])

    @property
    def present_mask(self) -> np.ndarray:
        if self.dim == 1:
            return self._axis_mask(0)
        return np.outer(self._axis_mask(1), self._axis_mask(0)).ravel()

    @property
    def nodes(self) -> np.ndarray:
        return self.offsets[self.present_mask]

    def __len__(self) -> int:
        return int(self.present_mask.sum())


def build_patch_topology(s: int, dim: int = 2, boundary_cut=None) -> PatchTopology:
    if boundary_cut is None:
        boundary_cut = (0,) * (2 * dim)
    return PatchTopology(patch_size=s, dim=dim, cuts=tuple(boundary_cut))


@dataclass(frozen=True, eq=False)
class ShapeTable:
    element_kind: str
    topology: PatchTopology | None
    node_offsets: np.ndarray  # (K, dim) parametric coordinates of the table's nodes
    points: np.ndarray  # (nq, dim)
    values: np.ndarray  # (nq, K)
    grads: np.ndarray  # (nq, K, dim)

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]


Q4_NODES = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
Q8_NODES = np.array(
    [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0], [0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]
)


def _points(xi, dim: int = 2) -> np.ndarray:
    return np.asarray(xi, dtype=float).reshape(-1, dim)


def q4_shape(xi):
    """Bilinear shape values ``(n, 4)`` and gradients ``(n, 4, 2)``."""
    pts = _points(xi)
    x, y = pts[:, :1], pts[:, 1:]
    cx, cy = Q4_NODES[:, 0], Q4_NODES[:, 1]
    vals = 0.25 * (1 + cx * x) * (1 + cy * y)
    grads = np.stack([0.25 * cx * (1 + cy * y), 0.25 * cy * (1 + cx * x)], axis=-1)
    return vals, grads


def q8_shape(xi):
    """Serendipity 8-node values ``(n, 8)`` and gradients ``(n, 8, 2)``."""
    pts = _points(xi)
    x, y = pts[:, :1], pts[:, 1:]
    cx, cy = Q8_NODES[:4, 0], Q8_NODES[:4, 1]
    corner = 0.25 * (1 + cx * x) * (1 + cy * y) * (cx * x + cy * y - 1)
    dcx = 0.25 * cx * (1 + cy * y) * (2 * cx * x + cy * y)
    dcy = 0.25 * cy * (1 + cx * x) * (cx * x + 2 * cy * y)
    # midsides on eta = +-1 (nodes 4, 6) and xi = +-1 (nodes 5, 7)
    my = np.array([-1.0, 1.0])
    mx = np.array([1.0, -1.0])
    mid_h = 0.5 * (1 - x**2) * (1 + my * y)
    dmh_x = -x * (1 + my * y)
    dmh_y = 0.5 * (1 - x**2) * my
    mid_v = 0.5 * (1 + mx * x) * (1 - y**2)
    dmv_x = 0.5 * mx * (1 - y**2)
    dmv_y = -(1 + mx * x) * y
    vals = np.column_stack([corner, mid_h[:, 0], mid_v[:, 0], mid_h[:, 1], mid_v[:, 1]])
    gx = np.column_stack([dcx, dmh_x[:, 0], dmv_x[:, 0], dmh_x[:, 1], dmv_x[:, 1]])
    gy = np.column_stack([dcy, dmh_y[:, 0], dmv_y[:, 0], dmh_y[:, 1], dmv_y[:, 1]])
    return vals, np.stack([gx, gy], axis=-1)


def _hat_functions(pts: np.ndarray):
    """Linear corner hats of the parent element and their gradients."""
    if pts.shape[1] == 1:
        corners = np.array([[-1.0], [1.0]])
        x = pts[:, :1]
        vals = 0.5 * (1 + corners[:, 0] * x)
        grads = (0.5 * corners[:, 0] * np.ones_like(x))[..., None]
        return corners, vals, grads
    vals, grads = q4_shape(pts)
    return Q4_NODES, vals, grads


def corner_patches(topology: PatchTopology):
    """Yield ``(corner, lattice indices, NodalPatch)`` for every element corner."""
    nodes = topology.nodes
    corners = np.array([[-1.0], [1.0]]) if topology.dim == 1 else Q4_NODES
    reach = 2 * topology.patch_size
    for corner in corners:
        sel = np.all(np.abs(nodes - corner) <= reach + 1e-12, axis=1)
        idx = np.flatnonzero(sel)
        yield corner, idx, NodalPatch(corner if topology.dim > 1 else corner[0], nodes[idx])


def build_cfe_table(params: CfeParams, topology: PatchTopology, points) -> ShapeTable:
    """Tabulate C-FE shape functions and parametric gradients at ``points``."""
    if topology.patch_size != params.patch_size:
        raise ValueError(
            f"topology patch size {topology.patch_size} does not match params s={params.patch_size}"
        )
    pts = _points(points, topology.dim)
    kp = params.kernel
    nodes = topology.nodes
    _, hats, dhats = _hat_functions(pts)
    values = np.zeros((len(pts), len(nodes)))
    grads = np.zeros((len(pts), len(nodes), topology.dim))
    for i, (corner, idx, patch) in enumerate(corner_patches(topology)):
        exps = supported_exponents(kp.order, patch.nodes)
        try:
            coef = build_rbf_interpolant(kp, patch, exps)
        except KernelError as exc:
            raise KernelError(f"C-FE element with cuts {topology.cuts}: {exc}") from exc
        w = eval_patch_functions(coef, kp, patch, pts)
        dw = eval_patch_function_gradients(coef, kp, patch, pts)
        values[:, idx] += hats[:, i : i + 1] * w
        grads[:, idx, :] += dhats[:, i, None, :] * w[..., None] + hats[:, i, None, None] * dw
    return ShapeTable(
        element_kind=element_label(params),
        topology=topology,
        node_offsets=nodes,
        points=pts,
        values=values,
        grads=grads,
    )


def build_fe_table(kind: str, points) -> ShapeTable:
    pts = _points(points)
    if kind == "q4":
        vals, grads = q4_shape(pts)
        nodes = Q4_NODES
    elif kind == "q8":
        vals, grads = q8_shape(pts)
        nodes = Q8_NODES
    else:
        raise ValueError(f"unknown FE element kind {kind!r}")
    return ShapeTable(kind, None, nodes, pts, vals, grads)


_cache: dict = {}
_cache_lock = threading.Lock()


def shape_table(kind: ElementKind, topology: PatchTopology | None, points, cache: bool = True) -> ShapeTable:
    """Cached table lookup for any element kind."""
    pts = np.ascontiguousarray(np.asarray(points, dtype=float))
    key = (kind, topology, pts.shape, pts.tobytes()) if cache else None
    if cache:
        with _cache_lock:
            hit = _cache.get(key)
        if hit is not None:
            return hit
    if isinstance(kind, CfeParams):
        table = build_cfe_table(kind, topology, pts)
    else:
        table = build_fe_table(kind, pts)
    if cache:
        with _cache_lock:
            table = _cache.setdefault(key, table)
    return table


def clear_cache():
    with _cache_lock:
        _cache.clear()


def isoparametric_map(table: ShapeTable, node_coords):
    """Physical points ``(nq, dim)`` and Jacobians ``(nq, dim, dim)``.

    ``J[q, a, b] = dx_a / dxi_b``.
    """
    coords = np.asarray(node_coords, dtype=float).reshape(table.n_nodes, -1)
    x = table.values @ coords
    jac = np.einsum("ka,qkb->qab", coords, table.grads)
    det = np.linalg.det(jac) if jac.shape[-1] > 1 else jac[:, 0, 0]
    if np.any(np.abs(det) < 1e-14):
        raise ValueError("isoparametric map has a singular Jacobian")
    return x, jac


def shape_curves_1d(kind: ElementKind, xi) -> tuple[np.ndarray, np.ndarray]:
    """Global 1D basis functions of the reference element's patch nodes.

    The reference element is ``[-1, 1]`` inside an unbounded uniform mesh with
    nodes at odd integers.  Returns the node positions ``(K,)`` and values
    ``(len(xi), K)``; inside ``[-1, 1]`` the curves sum to one, outside they
    show each node's support tails across neighbouring elements.
    """
    xi = np.asarray(xi, dtype=float).ravel()
    if kind == "q4":
        s = 0
        table_for = lambda pts: (np.array([-1.0, 1.0]), _hat_functions(pts)[1])  # noqa: E731
    elif isinstance(kind, CfeParams):
        s = kind.patch_size
        topo = build_patch_topology(s, dim=1)

        def table_for(pts):
            t = shape_table(kind, topo, pts, cache=False)
            return t.node_offsets[:, 0], t.values

    else:
        raise ValueError(f"1D curves are defined for q4 and C-FE elements, not {kind!r}")
    nodes = np.arange(-(2 * s + 1), 2 * s + 2, 2, dtype=float)
    out = np.zeros((len(xi), len(nodes)))
    # element m spans [2m-1, 2m+1]; edge points go to the lower element
    m = np.ceil((xi - 1.0) / 2.0).astype(int)
    for em in np.unique(m):
        sel = np.flatnonzero(m == em)
        local_nodes, vals = table_for((xi[sel] - 2 * em)[:, None])
        glob = local_nodes + 2 * em
        for j, node in enumerate(nodes):
            hit = np.flatnonzero(np.isclose(glob, node))
            if len(hit):
                out[sel, j] = vals[:, hit[0]]
    return nodes, out
