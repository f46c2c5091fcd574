"""Error and resolution metrics for DIC results.

RMSE and relative L2 errors against analytic truth, spatial resolution
from the 10 % fractional-attenuation crossing of a fitted line cut,
measurement resolution from noise-floor samples, and their product (MEI).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np


@dataclass
class ErrorReport:
    component: str
    rmse: float
    l2_relative: float
    samples: int


@dataclass
class SpatialResolution:
    found: bool
    position: float | None  # distance along the cut from its fine-frequency end
    fit_degree: int
    fit_residual: float
    message: str = ""


@dataclass
class ResolutionReport:
    spatial_resolution: float | None
    measurement_resolution: float
    mei: float | None
    fit_degree: int
    fit_residual: float


def rmse(values, truth) -> float:
    values = np.asarray(values, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if values.shape != truth.shape:
        raise ValueError(f"length mismatch: {values.size} vs {truth.size}")
    if values.size == 0:
        raise ValueError("need at least one sample")
    return float(np.sqrt(np.mean((values - truth) ** 2)))


def gauss_points(mesh, order: int = 4):
    """Physical Gauss-Legendre points ``(E*order^2, 2)`` and weights over the mesh."""
    t, w = np.polynomial.legendre.leggauss(order)
    eta, xi = np.meshgrid(t, t, indexing="ij")
    ww = np.outer(w, w).ravel()
    h = mesh.element_size
    origins = mesh.element_origin(np.arange(mesh.n_elements))
    local = 0.5 * h * (np.column_stack([xi.ravel(), eta.ravel()]) + 1.0)
    pts = (origins[:, None, :] + local[None, :, :]).reshape(-1, 2)
    weights = np.tile(ww * (0.5 * h) ** 2, mesh.n_elements)
    return pts, weights


def l2_error(sampler: Callable, truth: Callable, mesh, gauss_order: int = 4) -> float:
    """``||u - u_true|| / ||u_true||`` in L2 over the meshed ZoI."""
    pts, w = gauss_points(mesh, gauss_order)
    u = np.asarray(sampler(pts), dtype=float).ravel()
    ut = np.asarray(truth(pts), dtype=float).ravel()
    den = float(np.sum(w * ut**2))
    if den == 0.0:
        raise ValueError("ground truth has zero L2 norm; relative error undefined")
    return float(np.sqrt(np.sum(w * (u - ut) ** 2) / den))


def spatial_resolution(
    positions, measured, truth, fit_degree: int = 8, threshold: float = 0.1, fine_end: str = "start"
) -> SpatialResolution:
    """First point where the fitted fractional attenuation falls to ``threshold``.

    Attenuation is ``1 - measured/truth``.  The polynomial fit is scanned from
    the fine-frequency end of the cut (``start`` = smallest position); the
    returned position is measured from that end.
    """
    pos = np.asarray(positions, dtype=float).ravel()
    meas = np.asarray(measured, dtype=float).ravel()
    tru = np.asarray(truth, dtype=float).ravel() * np.ones_like(pos)
    if not (len(pos) == len(meas) == len(tru)):
        raise ValueError("positions, measured and truth must have equal length")
    if np.any(tru == 0):
        raise ValueError("truth amplitude must be nonzero along the cut")
    dist = pos - pos.min() if fine_end == "start" else pos.max() - pos
    order = np.argsort(dist)
    dist, att = dist[order], (1.0 - meas / tru)[order]
    poly = np.polynomial.Polynomial.fit(dist, att, fit_degree)
    residual = float(np.sqrt(np.mean((poly(dist) - att) ** 2)))
    dense = np.linspace(dist[0], dist[-1], max(20 * len(dist), 2000))
    fitted = poly(dense) - threshold
    above = fitted > 0
    if not above[0]:
        return SpatialResolution(False, None, fit_degree, residual, "no attenuation above threshold: resolution beyond cut range")
    cross = np.flatnonzero(above[:-1] & ~above[1:])
    if len(cross) == 0:
        return SpatialResolution(False, None, fit_degree, residual, "attenuation never falls below threshold: resolution beyond cut range")
    i = cross[0]
    # linear refinement between the bracketing dense samples
    x0, x1, y0, y1 = dense[i], dense[i + 1], fitted[i], fitted[i + 1]
    pos_cross = x0 + (x1 - x0) * y0 / (y0 - y1)
    return SpatialResolution(True, float(pos_cross), fit_degree, residual)


def measurement_resolution(values) -> float:
    """Sample standard deviation of noise-floor displacement samples."""
    vals = np.asarray(values, dtype=float).ravel()
    if vals.size < 2:
        raise ValueError("need at least 2 samples")
    return float(np.std(vals, ddof=1))


def mei(sr: float, mr: float) -> float:
    if not (np.isfinite(sr) and np.isfinite(mr)):
        raise ValueError("spatial and measurement resolutions must be finite")
    return float(sr * mr)


def report_json(path, data: dict):
    Path(path).write_text(json.dumps(_plain(data), indent=2))


def _plain(obj):
    if hasattr(obj, "__dataclass_fields__"):
        return _plain(asdict(obj))
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def markdown_table(rows: list[dict]) -> str:
    """Table with columns Method, Element size, RMSE/L2 for u and exx."""
    head = "| Method | Element size | RMSE(u) | L2(u) | RMSE(exx) | L2(exx) |\n|---|---|---|---|---|---|\n"

    def fmt(v):
        return "-" if v is None else f"{v:.4g}"

    body = "".join(
        f"| {r['method']} | {r['element_size']} | {fmt(r.get('rmse_u'))} | {fmt(r.get('l2_u'))} | "
        f"{fmt(r.get('rmse_exx'))} | {fmt(r.get('l2_exx'))} |\n"
        for r in rows
    )
    return head + body


def evaluate_solution(solution, deformation, gauss_order: int = 4, step: float = 1.0) -> dict:
    """RMSE (on a pixel raster) and L2 errors of ``u``, ``v``, ``exx``, ``eyy`` against analytic truth."""
    from .postprocess import compute_strain, pixel_grid, sample_displacement

    pts, _ = pixel_grid(solution.mesh.zoi, step)
    disp = sample_displacement(solution, pts)
    strain = compute_strain(solution, pts)
    tu, tv = deformation.displacement(pts[:, 0], pts[:, 1])
    texx, teyy, _ = deformation.strain(pts[:, 0], pts[:, 1])

    samplers = {
        "u": (lambda p: sample_displacement(solution, p).component("u"), lambda p: deformation.displacement(p[:, 0], p[:, 1])[0]),
        "v": (lambda p: sample_displacement(solution, p).component("v"), lambda p: deformation.displacement(p[:, 0], p[:, 1])[1]),
        "exx": (lambda p: compute_strain(solution, p).component("exx"), lambda p: deformation.strain(p[:, 0], p[:, 1])[0]),
        "eyy": (lambda p: compute_strain(solution, p).component("eyy"), lambda p: deformation.strain(p[:, 0], p[:, 1])[1]),
    }
    raster = {"u": (disp.component("u"), tu), "v": (disp.component("v"), tv), "exx": (strain.component("exx"), texx), "eyy": (strain.component("eyy"), teyy)}
    out = {}
    for name, (vals, truth) in raster.items():
        try:
            l2 = l2_error(*samplers[name], solution.mesh, gauss_order)
        except ValueError:
            l2 = None
        out[name] = ErrorReport(name, rmse(vals, truth), l2, len(vals))
    return out
