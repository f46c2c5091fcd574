"""Smooth grayscale surrogates of pixel images.

Two backends share one evaluation interface (``evaluate`` for scattered
points, ``evaluate_grid`` for tensor grids, both returning value and
gradient):

* :class:`SeparatedSplineModel` -- truncated SVD of the pixel matrix, each
  singular-vector pair interpolated with 1D cubic splines, so that
  ``f(x, y) = sum_m fx_m(x) fy_m(y)``.
* :class:`CfeGrayModel` -- C-FE interpolation of the pixel values on the
  pixel lattice (one element per pixel cell).

Images are 2D float arrays indexed ``[row, col] = [y, x]`` with values in
``[0, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.interpolate import CubicSpline

from .mesh import ZoneOfInterest, build_connectivity, build_mesh
from .shapes import CfeParams, shape_table

BT709 = np.array([0.2126, 0.7152, 0.0722])
MODEL_FORMAT_VERSION = 1
_CHUNK = 32768


def load_image(path) -> np.ndarray:
    """Read PNG/PGM/TIFF into a float array scaled to ``[0, 1]``.

    Colour images are reduced to BT.709 luma.
    """
    path = Path(path)
    try:
        im = Image.open(path)
        im.load()
    except FileNotFoundError:
        raise
    except Exception as exc:  # Pillow raises a zoo of types for bad files
        raise OSError(f"cannot read image {path}: {exc}") from exc
    mode = im.mode
    if mode in ("1", "P", "LA", "PA"):
        im = im.convert("RGBA" if "A" in mode else "L") if mode != "P" else im.convert("RGB")
        mode = im.mode
    arr = np.asarray(im)
    if mode == "L":
        out = arr / 255.0
    elif mode.startswith("I;16") or mode == "I":
        out = arr.astype(float) / 65535.0
    elif mode == "F":
        out = arr.astype(float)
    elif mode in ("RGB", "RGBA"):
        out = arr[..., :3].astype(float) @ BT709 / 255.0
    else:
        raise OSError(f"unsupported image mode {mode!r} in {path}")
    out = np.ascontiguousarray(out, dtype=float)
    if out.ndim != 2 or min(out.shape) < 2:
        raise OSError(f"{path} is not a 2D image of at least 2x2 pixels")
    if not np.all(np.isfinite(out)):
        raise OSError(f"{path} contains non-finite values")
    return out


def save_image(path, image: np.ndarray, bits: int = 8):
    """Write a ``[0, 1]`` array as an 8- or 16-bit grayscale PNG/TIFF."""
    img = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    if bits == 8:
        Image.fromarray(np.round(img * 255).astype(np.uint8), mode="L").save(path)
    elif bits == 16:
        Image.fromarray(np.round(img * 65535).astype(np.uint16)).save(path)
    else:
        raise ValueError("bits must be 8 or 16")


class _GrayModel:
    height: int
    width: int

    def _check_domain(self, x, y, tol=1e-9):
        if (
            np.min(x) < -tol
            or np.max(x) > self.width - 1 + tol
            or np.min(y) < -tol
            or np.max(y) > self.height - 1 + tol
        ):
            raise ValueError(
                f"evaluation point outside the image domain [0,{self.width - 1}]x[0,{self.height - 1}]"
            )

    def __call__(self, x, y):
        return self.evaluate(x, y)[0]

    def gradient(self, x, y):
        _, gx, gy = self.evaluate(x, y)
        return gx, gy


@dataclass(frozen=True, eq=False)
class SeparatedSplineModel(_GrayModel):
    x_factors: np.ndarray  # (width, M), sqrt(sigma)-scaled right singular vectors
    y_factors: np.ndarray  # (height, M)
    singular_values: np.ndarray
    relative_error: float = 0.0

    def __post_init__(self):
        xs = np.arange(self.x_factors.shape[0], dtype=float)
        ys = np.arange(self.y_factors.shape[0], dtype=float)
        object.__setattr__(self, "_sx", CubicSpline(xs, self.x_factors, axis=0, bc_type="not-a-knot"))
        object.__setattr__(self, "_sy", CubicSpline(ys, self.y_factors, axis=0, bc_type="not-a-knot"))
        object.__setattr__(self, "_dsx", self._sx.derivative())
        object.__setattr__(self, "_dsy", self._sy.derivative())

    @property
    def mode_count(self) -> int:
        return self.x_factors.shape[1]

    @property
    def width(self) -> int:
        return self.x_factors.shape[0]

    @property
    def height(self) -> int:
        return self.y_factors.shape[0]

    def reconstruct(self) -> np.ndarray:
        return self.y_factors @ self.x_factors.T

    def evaluate(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        x, y = np.broadcast_arrays(x, y)
        x = x.ravel()
        y = y.ravel()
        self._check_domain(x, y)
        val = np.empty(len(x))
        gx = np.empty(len(x))
        gy = np.empty(len(x))
        for lo in range(0, len(x), _CHUNK):
            sl = slice(lo, lo + _CHUNK)
            fx, fy = self._sx(x[sl]), self._sy(y[sl])
            val[sl] = np.einsum("nm,nm->n", fx, fy)
            gx[sl] = np.einsum("nm,nm->n", self._dsx(x[sl]), fy)
            gy[sl] = np.einsum("nm,nm->n", fx, self._dsy(y[sl]))
        return val.reshape(shape), gx.reshape(shape), gy.reshape(shape)

    def evaluate_grid(self, xs, ys):
        """Value and gradient on the tensor grid, arrays of shape ``(len(ys), len(xs))``."""
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        self._check_domain(xs, ys)
        fx, dfx = self._sx(xs), self._dsx(xs)
        fy, dfy = self._sy(ys), self._dsy(ys)
        return fy @ fx.T, fy @ dfx.T, dfy @ fx.T

    def save(self, path):
        """Write the factors to a versioned ``.npz`` sidecar."""
        np.savez_compressed(
            path,
            version=np.int64(MODEL_FORMAT_VERSION),
            x_factors=self.x_factors,
            y_factors=self.y_factors,
            singular_values=self.singular_values,
            relative_error=np.float64(self.relative_error),
        )

    @classmethod
    def load(cls, path) -> "SeparatedSplineModel":
        with np.load(path) as data:
            version = int(data["version"])
            if version != MODEL_FORMAT_VERSION:
                raise ValueError(f"unsupported model sidecar version {version}")
            return cls(
                data["x_factors"], data["y_factors"], data["singular_values"], float(data["relative_error"])
            )


def decompose(image: np.ndarray, rank: int | None = None, tol: float = 1e-4) -> SeparatedSplineModel:
    """Truncated-SVD separated spline model of ``image``.

    With ``rank`` given the first ``rank`` modes are kept; otherwise the
    smallest rank whose relative Frobenius truncation error is ``<= tol``.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2 or min(img.shape) < 2:
        raise ValueError("image must be a 2D array of at least 2x2 pixels")
    u, s, vt = np.linalg.svd(img, full_matrices=False)
    energy = float(np.sum(s**2))
    # tail[m] = squared Frobenius error after keeping m modes
    tail = np.concatenate([np.cumsum((s**2)[::-1])[::-1], [0.0]])
    if rank is None:
        if energy == 0.0:
            m = 1
        else:
            ok = np.flatnonzero(np.sqrt(np.maximum(tail, 0.0) / energy) <= tol)
            m = max(1, int(ok[0]))
    else:
        m = int(np.clip(rank, 1, len(s)))
    rel = float(np.sqrt(max(tail[m], 0.0) / energy)) if energy > 0 else 0.0
    root = np.sqrt(s[:m])
    return SeparatedSplineModel(
        x_factors=vt[:m].T * root, y_factors=u[:, :m] * root, singular_values=s[:m], relative_error=rel
    )


@dataclass(frozen=True, eq=False)
class CfeGrayModel(_GrayModel):
    """C-FE interpolation of pixel values with nodes at pixel centres."""

    values: np.ndarray  # (height, width) nodal grayscale
    params: CfeParams = CfeParams()

    def __post_init__(self):
        h, w = self.values.shape
        mesh = build_mesh(ZoneOfInterest(0, 0, w - 1, h - 1), 1)
        conn = build_connectivity(mesh, self.params)
        object.__setattr__(self, "_conn", conn)
        object.__setattr__(self, "_flat", np.ascontiguousarray(self.values, dtype=float).ravel())

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def element_eval(self, e: int, xi):
        """Value and physical gradient inside pixel cell ``e`` at local ``xi``."""
        conn = self._conn
        topo = conn.topology_of(e)
        ids = conn.element_nodes(e)
        table = shape_table(self.params, topo, np.asarray(xi, dtype=float).reshape(-1, 2), cache=False)
        fk = self._flat[ids]
        # unit pixel cells: J = I/2
        return table.values @ fk, 2.0 * np.einsum("qkd,k->qd", table.grads, fk)

    def evaluate(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        x, y = (a.ravel() for a in np.broadcast_arrays(x, y))
        self._check_domain(x, y)
        conn = self._conn
        e, xi = conn.mesh.locate(np.column_stack([x, y]))
        gid, row = conn.element_group()
        val = np.empty(len(x))
        grad = np.empty((len(x), 2))
        for g, grp in enumerate(conn.groups):
            sel = np.flatnonzero(gid[e] == g)
            if len(sel) == 0:
                continue
            uniq, inv = np.unique(xi[sel], axis=0, return_inverse=True)
            inv = inv.ravel()
            table = shape_table(self.params, grp.topology, uniq, cache=len(uniq) <= 16)
            for lo in range(0, len(sel), _CHUNK):
                part = sel[lo : lo + _CHUNK]
                fk = self._flat[grp.node_ids[row[e[part]]]]
                iv = inv[lo : lo + _CHUNK]
                val[part] = np.einsum("nk,nk->n", table.values[iv], fk)
                grad[part] = 2.0 * np.einsum("nkd,nk->nd", table.grads[iv], fk)
        return val.reshape(shape), grad[:, 0].reshape(shape), grad[:, 1].reshape(shape)

    def evaluate_grid(self, xs, ys):
        yy, xx = np.meshgrid(np.asarray(ys, dtype=float), np.asarray(xs, dtype=float), indexing="ij")
        return self.evaluate(xx, yy)


def cfe_gray_eval(model: CfeGrayModel, e: int, xi):
    return model.element_eval(e, xi)


def build_gray_model(image: np.ndarray, backend: str = "spline", *, rank=None, tol=1e-4, cfe_params=None):
    if backend == "spline":
        return decompose(image, rank=rank, tol=tol)
    if backend == "cfe":
        return CfeGrayModel(np.asarray(image, dtype=float), cfe_params or CfeParams())
    raise ValueError(f"unknown grayscale backend {backend!r}")
