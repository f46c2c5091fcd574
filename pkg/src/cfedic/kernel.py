"""Cubic-spline kernels and radial-basis patch interpolants.

A convolution patch function set ``W_j`` over a nodal patch is the radial
basis interpolant

    u(xi) = Psi_a(xi) k + p(xi) l

whose coefficients are fixed by interpolation at the patch nodes plus the
vanishing-moment conditions ``P^T k = 0``.  Writing ``k = K u`` and
``l = L u`` gives

    L = (P^T R0^-1 P)^-1 P^T R0^-1,    K = R0^-1 (I - P L)

and ``W(xi) = Psi_a(xi) K + p(xi) L``.  In 2D the kernel is the tensor
product of 1D kernels along each parametric axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SUPPORTED_ORDERS = (1, 2)
MAX_CONDITION = 1e12


class KernelError(ValueError):
    """Raised when a patch interpolant cannot be built reliably."""


@dataclass(frozen=True)
class KernelParams:
    order: int = 2
    dilation: float = 8.0

    def __post_init__(self):
        if self.order not in SUPPORTED_ORDERS:
            raise ValueError(
                f"polynomial order p={self.order} is not supported; use one of {SUPPORTED_ORDERS}"
            )
        if not self.dilation > 0:
            raise ValueError(f"dilation a must be positive, got {self.dilation}")


@dataclass(frozen=True, eq=False)
class NodalPatch:
    """Support nodes of one patch interpolant, in parametric coordinates.

    ``nodes`` has shape ``(n, dim)``; ``center`` is the FE node owning the patch.
    """

    center: np.ndarray
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float))
        if nodes.shape[0] == 1 and np.ndim(self.nodes) == 1 and np.ndim(self.center) == 0:
            nodes = nodes.T
        center = np.atleast_1d(np.asarray(self.center, dtype=float))
        if nodes.shape[0] == 0:
            raise ValueError("nodal patch must contain at least one node")
        if center.shape[0] != nodes.shape[1]:
            raise ValueError("patch center and nodes have different dimensions")
        if len(np.unique(nodes, axis=0)) != len(nodes):
            raise ValueError("patch node coordinates must be pairwise distinct")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "center", center)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def __len__(self) -> int:
        return self.nodes.shape[0]


@dataclass(frozen=True, eq=False)
class RbfCoefficients:
    kernel_weights: np.ndarray  # K, (n, n)
    poly_weights: np.ndarray  # L, (m, n)
    exponents: tuple = field(default=())
    condition: float = float("nan")


def cubic_spline_kernel(z):
    """Three-branch cubic spline with support ``[0, 1]``.

    >>> float(cubic_spline_kernel(0.5))
    0.16666666666666663
    """
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("cubic spline kernel is defined for z >= 0 only")
    inner = 2.0 / 3.0 - 4.0 * z**2 + 4.0 * z**3
    outer = 4.0 / 3.0 - 4.0 * z + 4.0 * z**2 - (4.0 / 3.0) * z**3
    return np.where(z <= 0.5, inner, np.where(z <= 1.0, outer, 0.0))


def cubic_spline_kernel_derivative(z):
    """d/dz of :func:`cubic_spline_kernel`; zero at ``z = 0``."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("cubic spline kernel is defined for z >= 0 only")
    inner = -8.0 * z + 12.0 * z**2
    outer = -4.0 + 8.0 * z - 4.0 * z**2
    return np.where(z <= 0.5, inner, np.where(z <= 1.0, outer, 0.0))


def _as_points(xi, dim: int) -> np.ndarray:
    pts = np.asarray(xi, dtype=float)
    if dim == 1:
        return pts.reshape(-1, 1)
    return np.atleast_2d(pts).reshape(-1, dim)


def kernel_vector(params: KernelParams, patch: NodalPatch, xi) -> np.ndarray:
    """Kernel values ``Psi_a(xi - xi_I)`` for every patch node ``I``.

    Returns an array of shape ``(npts, n)``.
    """
    pts = _as_points(xi, patch.dim)
    diff = np.abs(pts[:, None, :] - patch.nodes[None, :, :]) / params.dilation
    return np.prod(cubic_spline_kernel(diff), axis=2)


def kernel_vector_gradient(params: KernelParams, patch: NodalPatch, xi) -> np.ndarray:
    """Parametric gradient of :func:`kernel_vector`, shape ``(npts, n, dim)``."""
    pts = _as_points(xi, patch.dim)
    delta = pts[:, None, :] - patch.nodes[None, :, :]
    z = np.abs(delta) / params.dilation
    psi = cubic_spline_kernel(z)
    dpsi = cubic_spline_kernel_derivative(z) * np.sign(delta) / params.dilation
    out = np.empty_like(psi)
    for d in range(patch.dim):
        others = np.prod(np.delete(psi, d, axis=2), axis=2) if patch.dim > 1 else 1.0
        out[..., d] = dpsi[..., d] * others
    return out


def monomial_exponents(order: int, dim: int) -> list[tuple[int, ...]]:
    """Exponent tuples of the polynomial basis.

    1D: ``1, xi, ..., xi^p``.  2D: ``[1, xi, xi^2, eta, xi*eta, eta^2]`` for
    ``p = 2`` and ``[1, xi, eta]`` for ``p = 1`` (grouped by eta power).
    """
    if order < 0:
        raise ValueError("polynomial order must be non-negative")
    if dim == 1:
        return [(i,) for i in range(order + 1)]
    if dim == 2:
        return [(i, j) for j in range(order + 1) for i in range(order + 1 - j)]
    raise ValueError(f"unsupported dimension {dim}")


def _monomials(pts: np.ndarray, exponents: Sequence[tuple[int, ...]]) -> np.ndarray:
    exps = np.asarray(exponents, dtype=int)
    return np.prod(pts[:, None, :] ** exps[None, :, :], axis=2)


def _monomial_gradients(pts: np.ndarray, exponents: Sequence[tuple[int, ...]]) -> np.ndarray:
    exps = np.asarray(exponents, dtype=int)
    npts, dim = pts.shape
    out = np.zeros((npts, len(exps), dim))
    for d in range(dim):
        lowered = exps.copy()
        lowered[:, d] = np.maximum(lowered[:, d] - 1, 0)
        out[..., d] = exps[None, :, d] * np.prod(pts[:, None, :] ** lowered[None, :, :], axis=2)
    return out


def polynomial_basis(p: int, xi) -> np.ndarray:
    """Monomial basis vector of order ``p`` at a 1D scalar or a 2D point."""
    if p not in SUPPORTED_ORDERS:
        raise ValueError(f"polynomial order p={p} is not supported")
    arr = np.asarray(xi, dtype=float)
    dim = 1 if arr.ndim == 0 else arr.shape[-1]
    pts = _as_points(arr, dim)
    vals = _monomials(pts, monomial_exponents(p, dim))
    return vals[0] if arr.ndim <= 1 else vals


def supported_exponents(order: int, nodes: np.ndarray) -> list[tuple[int, ...]]:
    """Monomials of total order <= ``order`` that the node lattice can carry.

    An axis with ``c`` distinct coordinates supports powers up to ``c - 1``;
    full lattices keep the complete basis.
    """
    nodes = np.atleast_2d(nodes)
    caps = [len(np.unique(nodes[:, d])) - 1 for d in range(nodes.shape[1])]
    return [e for e in monomial_exponents(order, nodes.shape[1]) if all(ei <= c for ei, c in zip(e, caps))]


def build_rbf_interpolant(
    params: KernelParams, patch: NodalPatch, exponents: Sequence[tuple[int, ...]] | None = None
) -> RbfCoefficients:
    """Solve for the ``K`` and ``L`` matrices of one nodal patch."""
    if exponents is None:
        exponents = monomial_exponents(params.order, patch.dim)
    exponents = tuple(tuple(int(v) for v in e) for e in exponents)
    r0 = kernel_vector(params, patch, patch.nodes)
    pmat = _monomials(patch.nodes, exponents)
    where = f"patch centered at {patch.center.tolist()} with {len(patch)} nodes"

    cond = np.linalg.cond(r0)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise KernelError(
            f"kernel moment matrix is ill-conditioned (cond={cond:.3g}) for {where}; "
            f"dilation a={params.dilation} is too small or too large for this patch"
        )
    if pmat.shape[1] > len(patch) or np.linalg.matrix_rank(pmat) < pmat.shape[1]:
        raise KernelError(
            f"polynomial basis of {pmat.shape[1]} terms is rank-deficient on {where}; "
            "use a larger patch or lower order"
        )

    r0_inv_p = np.linalg.solve(r0, pmat)
    gram = pmat.T @ r0_inv_p
    lmat = np.linalg.solve(gram, r0_inv_p.T)
    kmat = np.linalg.solve(r0, np.eye(len(patch)) - pmat @ lmat)
    return RbfCoefficients(kernel_weights=kmat, poly_weights=lmat, exponents=exponents, condition=cond)


def eval_patch_functions(coef: RbfCoefficients, params: KernelParams, patch: NodalPatch, xi) -> np.ndarray:
    """Patch function values ``W_j(xi)``, shape ``(npts, n)``."""
    pts = _as_points(xi, patch.dim)
    return kernel_vector(params, patch, pts) @ coef.kernel_weights + _monomials(pts, coef.exponents) @ coef.poly_weights


def eval_patch_function_gradients(coef: RbfCoefficients, params: KernelParams, patch: NodalPatch, xi) -> np.ndarray:
    """Parametric gradients ``dW_j/dxi``, shape ``(npts, n, dim)``."""
    pts = _as_points(xi, patch.dim)
    dk = kernel_vector_gradient(params, patch, pts)
    dp = _monomial_gradients(pts, coef.exponents)
    return np.einsum("qid,ij->qjd", dk, coef.kernel_weights) + np.einsum("qid,ij->qjd", dp, coef.poly_weights)
