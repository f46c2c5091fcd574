"""Global DIC: assembly and solution of the linearized optical-flow system.

With ``u(x) = N(xi) U^e`` on every element the stationarity condition of

    L(U) = int (g - f + u . grad f)^2 dx

gives ``K U = -Q`` with

    K = sum_e int N^T grad f grad f^T N J dxi
    Q = sum_e int N^T (g - f) grad f J dxi

Unknowns are ordered all ``u`` then all ``v``.  Integrals use a uniform
``n x n`` midpoint rule per element; ``n`` defaults to the element size,
i.e. one quadrature point per pixel.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .grayscale import build_gray_model
from .mesh import ElementPatchConnectivity, QuadMesh, ZoneOfInterest, build_connectivity, build_mesh
from .shapes import CfeParams, ElementKind, isoparametric_map, shape_table

log = logging.getLogger(__name__)

_ELEMENT_CHUNK = 256


class DicError(RuntimeError):
    pass


class SingularSystemError(DicError):
    """The correlation matrix has empty rows (no gray-level gradient under some nodes)."""


class ConvergenceError(DicError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class DicConfig:
    element: str = "cfe"
    order: int = 2
    patch_size: int = 2
    dilation: float = 8.0
    element_size: int = 20
    quad_points: int | None = None
    solver_tol: float = 1e-5
    max_solver_iters: int = 20000
    refinement_iters: int = 1
    grayscale: str = "spline"
    svd_tol: float = 1e-4
    svd_rank: int | None = None
    seed: int = 0
    threads: int = 0

    def __post_init__(self):
        if self.element not in ("q4", "q8", "cfe"):
            raise ValueError(f"element must be q4, q8 or cfe, got {self.element!r}")
        if self.grayscale not in ("spline", "cfe"):
            raise ValueError(f"grayscale backend must be spline or cfe, got {self.grayscale!r}")
        if self.solver_tol <= 0:
            raise ValueError("solver_tol must be positive")
        if self.n_quad < 2:
            raise ValueError("need at least 2 quadrature points per axis")
        if self.refinement_iters < 1:
            raise ValueError("refinement_iters must be >= 1")
        if self.element == "cfe":
            CfeParams(self.order, self.patch_size, self.dilation)

    @property
    def n_quad(self) -> int:
        return int(self.quad_points or self.element_size)

    @property
    def element_kind(self) -> ElementKind:
        if self.element == "cfe":
            return CfeParams(self.order, self.patch_size, self.dilation)
        return self.element

    def to_dict(self) -> dict:
        return asdict(self)


def quadrature_points(n: int):
    """Cell-centre points of a uniform ``n x n`` grid on ``[-1, 1]^2``.

    Points are ordered with xi varying fastest; all weights equal ``(2/n)^2``.
    """
    if n < 2:
        raise ValueError("need at least 2 points per axis")
    t = -1.0 + (2.0 * np.arange(n) + 1.0) / n
    eta, xi = np.meshgrid(t, t, indexing="ij")
    pts = np.column_stack([xi.ravel(), eta.ravel()])
    return pts, np.full(n * n, (2.0 / n) ** 2)


@dataclass(frozen=True, eq=False)
class SystemMatrices:
    K: sp.csc_matrix
    Q: np.ndarray

    @property
    def density(self) -> float:
        return self.K.nnz / float(self.K.shape[0] * self.K.shape[1])


@dataclass(frozen=True, eq=False)
class QuadratureFields:
    """Per-element samples at quadrature points, arrays of shape ``(E, nq)``."""

    points: np.ndarray  # parametric (nq, 2)
    weights: np.ndarray  # (nq,)
    x: np.ndarray
    y: np.ndarray
    f: np.ndarray
    fx: np.ndarray
    fy: np.ndarray
    g: np.ndarray


def _grid_to_elements(arr: np.ndarray, mesh: QuadMesh, n: int) -> np.ndarray:
    return arr.reshape(mesh.ny, n, mesh.nx, n).transpose(0, 2, 1, 3).reshape(mesh.n_elements, n * n)


def quadrature_fields(mesh: QuadMesh, f_model, g_model, n: int) -> QuadratureFields:
    pts, wts = quadrature_points(n)
    h = mesh.element_size
    t = 0.5 * h * (pts[:n, 0] + 1.0)
    xs = (mesh.zoi.x0 + h * np.arange(mesh.nx)[:, None] + t[None, :]).ravel()
    ys = (mesh.zoi.y0 + h * np.arange(mesh.ny)[:, None] + t[None, :]).ravel()
    f, fx, fy = f_model.evaluate_grid(xs, ys)
    g = g_model.evaluate_grid(xs, ys)[0]
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    el = lambda a: _grid_to_elements(a, mesh, n)  # noqa: E731
    return QuadratureFields(pts, wts, el(xx), el(yy), el(f), el(fx), el(fy), el(g))


def _jacobian_det(table, h: float) -> np.ndarray:
    _, jac = isoparametric_map(table, table.node_offsets * (0.5 * h))
    return np.linalg.det(jac)


def _chunks(n: int):
    return [slice(lo, min(lo + _ELEMENT_CHUNK, n)) for lo in range(0, n, _ELEMENT_CHUNK)]


def _map(fn, items, threads: int):
    if threads == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=None if threads <= 0 else threads) as pool:
        return list(pool.map(fn, items))


def assemble_matrix(conn: ElementPatchConnectivity, qf: QuadratureFields, threads: int = 1) -> sp.csc_matrix:
    """Global correlation matrix ``K`` as a ``(2n, 2n)`` CSC matrix."""
    h = conn.mesh.element_size
    n = conn.n_nodes
    blocks = {"uu": ([], [], []), "uv": ([], [], []), "vv": ([], [], [])}
    for grp in conn.groups:
        table = shape_table(conn.kind, grp.topology, qf.points)
        N = table.values
        w = qf.weights * _jacobian_det(table, h)
        fx = qf.fx[grp.elements]
        fy = qf.fy[grp.elements]
        k = N.shape[1]

        def element_blocks(sl):
            out = {}
            for name, a in (("uu", fx[sl] * fx[sl]), ("uv", fx[sl] * fy[sl]), ("vv", fy[sl] * fy[sl])):
                out[name] = np.matmul(N.T[None, :, :] * (a * w)[:, None, :], N)
            return out

        ids = grp.node_ids
        rows = np.repeat(ids, k, axis=1)
        cols = np.tile(ids, (1, k))
        for sl, res in zip(_chunks(len(ids)), _map(element_blocks, _chunks(len(ids)), threads)):
            for name, mats in res.items():
                blocks[name][0].append(rows[sl].ravel())
                blocks[name][1].append(cols[sl].ravel())
                blocks[name][2].append(mats.reshape(len(mats), -1).ravel())
    mats = {}
    for name, (r, c, d) in blocks.items():
        mats[name] = sp.coo_matrix((np.concatenate(d), (np.concatenate(r), np.concatenate(c))), shape=(n, n)).tocsc()
    return sp.bmat([[mats["uu"], mats["uv"]], [mats["uv"].T, mats["vv"]]], format="csc")


def assemble_rhs(conn: ElementPatchConnectivity, qf: QuadratureFields, residual: np.ndarray) -> np.ndarray:
    """``Q`` for a per-element residual ``g - f`` sampled at quadrature points."""
    h = conn.mesh.element_size
    n = conn.n_nodes
    qu = np.zeros(n)
    qv = np.zeros(n)
    for grp in conn.groups:
        table = shape_table(conn.kind, grp.topology, qf.points)
        w = qf.weights * _jacobian_det(table, h)
        r = residual[grp.elements] * w
        eu = (r * qf.fx[grp.elements]) @ table.values
        ev = (r * qf.fy[grp.elements]) @ table.values
        qu += np.bincount(grp.node_ids.ravel(), eu.ravel(), minlength=n)
        qv += np.bincount(grp.node_ids.ravel(), ev.ravel(), minlength=n)
    return np.concatenate([qu, qv])


def assemble(conn: ElementPatchConnectivity, f_model, g_model, n_quad: int, threads: int = 1) -> SystemMatrices:
    qf = quadrature_fields(conn.mesh, f_model, g_model, n_quad)
    return SystemMatrices(assemble_matrix(conn, qf, threads), assemble_rhs(conn, qf, qf.g - qf.f))


@dataclass
class PcgResult:
    x: np.ndarray
    iterations: int
    residual: float
    history: list
    converged: bool


def pcg(A, b, tol: float = 1e-5, max_iters: int = 20000, x0=None) -> PcgResult:
    """Jacobi-preconditioned conjugate gradients.

    Stops once ``||b - A x|| <= tol ||b||``.  ``history`` holds the relative
    residual after every iteration, starting with the initial guess.
    """
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    diag = A.diagonal() if sp.issparse(A) else np.diag(A)
    scale = np.max(np.abs(diag)) if len(diag) else 0.0
    empty = np.flatnonzero(diag <= 1e-14 * scale) if scale > 0 else np.arange(len(diag))
    if len(empty):
        raise SingularSystemError(
            f"{len(empty)} of {len(diag)} unknowns have a zero diagonal entry: speckle contrast is "
            "insufficient or nodes lie outside the textured region"
        )
    if bnorm == 0.0:
        return PcgResult(np.zeros_like(b), 0, 0.0, [0.0], True)
    inv_diag = 1.0 / diag
    r = b - A @ x
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    history = [np.linalg.norm(r) / bnorm]
    it = 0
    while history[-1] > tol and it < max_iters:
        ap = A @ p
        pap = p @ ap
        if pap <= 0:
            raise SingularSystemError("system matrix is not positive definite along a search direction")
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        it += 1
        history.append(np.linalg.norm(r) / bnorm)
        if history[-1] <= tol:
            break
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    true_res = np.linalg.norm(b - A @ x) / bnorm
    return PcgResult(x, it, float(true_res), history, history[-1] <= tol)


def solve(system: SystemMatrices, tol: float = 1e-5, max_iters: int = 20000) -> PcgResult:
    """Solve ``K U = -Q``; raise :class:`ConvergenceError` when PCG stalls."""
    res = pcg(system.K, -system.Q, tol, max_iters)
    if not res.converged:
        raise ConvergenceError(
            f"PCG did not reach relative residual {tol:g} in {max_iters} iterations "
            f"(last {res.history[-1]:.3g})",
            res.history,
        )
    return res


@dataclass(eq=False)
class DicSolution:
    conn: ElementPatchConnectivity
    config: DicConfig
    U: np.ndarray
    iterations: list = field(default_factory=list)
    residual: float = 0.0
    residual_history: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    @property
    def mesh(self) -> QuadMesh:
        return self.conn.mesh

    @property
    def n_nodes(self) -> int:
        return self.conn.n_nodes

    @property
    def u(self) -> np.ndarray:
        return self.U[: self.n_nodes]

    @property
    def v(self) -> np.ndarray:
        return self.U[self.n_nodes :]

    @property
    def nodal(self) -> np.ndarray:
        """Nodal displacements as ``(n_nodes, 2)``."""
        return np.column_stack([self.u, self.v])


def element_field_at_quadrature(conn: ElementPatchConnectivity, nodal: np.ndarray, points) -> np.ndarray:
    """Interpolate nodal values ``(n_nodes, c)`` to ``(E, nq, c)`` at parametric ``points``."""
    nodal = np.asarray(nodal, dtype=float).reshape(conn.n_nodes, -1)
    out = np.empty((conn.mesh.n_elements, len(points), nodal.shape[1]))
    for grp in conn.groups:
        table = shape_table(conn.kind, grp.topology, points)
        out[grp.elements] = np.einsum("qk,ekc->eqc", table.values, nodal[grp.node_ids])
    return out


def build_models(ref: np.ndarray, deformed: np.ndarray, config: DicConfig):
    kw = dict(rank=config.svd_rank, tol=config.svd_tol, cfe_params=config.element_kind if config.element == "cfe" else None)
    return build_gray_model(ref, config.grayscale, **kw), build_gray_model(deformed, config.grayscale, **kw)


def run_dic(ref, deformed, zoi: ZoneOfInterest, config: DicConfig | None = None, models=None) -> DicSolution:
    """Full pipeline: grayscale models, mesh, assembly and PCG solve.

    With ``refinement_iters > 1`` the right-hand side is re-evaluated from
    ``g(x) - f(x - u)`` at the current estimate and increments are
    accumulated (``K`` is kept from the first pass).
    """
    config = config or DicConfig()
    ref = np.asarray(ref, dtype=float)
    deformed = np.asarray(deformed, dtype=float)
    if ref.shape != deformed.shape:
        raise ValueError(f"image sizes differ: {ref.shape} vs {deformed.shape}")
    zoi.check_fits(ref.shape)
    timings = {}
    t0 = time.perf_counter()
    if models is None:
        models = build_models(ref, deformed, config)
    f_model, g_model = models
    timings["grayscale"] = time.perf_counter() - t0

    t = time.perf_counter()
    mesh = build_mesh(zoi, config.element_size)
    conn = build_connectivity(mesh, config.element_kind)
    qf = quadrature_fields(mesh, f_model, g_model, config.n_quad)
    K = assemble_matrix(conn, qf, config.threads)
    Q = assemble_rhs(conn, qf, qf.g - qf.f)
    timings["assembly"] = time.perf_counter() - t

    U = np.zeros(2 * conn.n_nodes)
    iterations, history = [], []
    timings["solve"] = 0.0
    res = None
    for k in range(config.refinement_iters):
        if k > 0:
            t = time.perf_counter()
            disp = element_field_at_quadrature(conn, U.reshape(2, -1).T, qf.points)
            shifted = f_model.evaluate(qf.x - disp[..., 0], qf.y - disp[..., 1])[0]
            Q = assemble_rhs(conn, qf, qf.g - shifted)
            timings["assembly"] += time.perf_counter() - t
        history.append(float(np.linalg.norm(Q)))
        t = time.perf_counter()
        res = solve(SystemMatrices(K, Q), config.solver_tol, config.max_solver_iters)
        timings["solve"] += time.perf_counter() - t
        U = U + res.x
        iterations.append(res.iterations)
        log.info("pass %d: %d PCG iterations, |Q| = %.3e", k + 1, res.iterations, history[-1])
    timings["total"] = time.perf_counter() - t0
    return DicSolution(conn, config, U, iterations, res.residual, history, timings)


def save_solution(solution: DicSolution, path):
    """Nodal solution plus everything needed to rebuild the mesh (``.npz``)."""
    import json

    z = solution.mesh.zoi
    np.savez_compressed(
        path,
        version=np.int64(1),
        U=solution.U,
        node_coords=solution.conn.node_coords,
        zoi=np.array([z.x0, z.y0, z.width, z.height], dtype=np.int64),
        config=np.array(json.dumps(solution.config.to_dict())),
        iterations=np.array(solution.iterations, dtype=np.int64),
        residual=np.float64(solution.residual),
    )


def load_solution(path) -> DicSolution:
    import json

    with np.load(path) as data:
        if int(data["version"]) != 1:
            raise ValueError(f"unsupported solution file version {int(data['version'])}")
        config = DicConfig(**json.loads(str(data["config"])))
        zoi = ZoneOfInterest(*(int(v) for v in data["zoi"]))
        conn = build_connectivity(build_mesh(zoi, config.element_size), config.element_kind)
        U = data["U"]
        if len(U) != 2 * conn.n_nodes:
            raise ValueError("solution vector does not match the stored mesh")
        return DicSolution(conn, config, U, data["iterations"].tolist(), float(data["residual"]))
