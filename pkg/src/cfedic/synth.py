"""Analytic speckle patterns, exact warping and ground-truth deformation fields.

Patterns are sums of isotropic Gaussian blobs and can be evaluated at any
real coordinate, so a deformed image ``g(x) = f(x - u(x))`` is rendered
without interpolation bias.  Random draws use numpy's counter-based Philox
bit generator, seeded explicitly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

# Gaussian tails beyond this many sigmas are dropped (exp(-18) ~ 1.5e-8)
_CUTOFF_SIGMAS = 6.0


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True, eq=False)
class SpecklePattern:
    centers: np.ndarray  # (n, 2) pixel coordinates (x, y)
    radii: np.ndarray  # (n,) Gaussian sigma in pixels
    amplitudes: np.ndarray  # (n,)
    background: float = 0.0

    def __post_init__(self):
        if len(self.radii) == 0:
            raise ValueError("speckle pattern needs at least one blob")
        if np.min(self.radii) < 1.0:
            raise ValueError("blob radii must be >= 1 px so pixel sampling is faithful")

    def evaluate(self, x, y) -> np.ndarray:
        """Unclamped intensity at arbitrary points (same shape as ``x``)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        xf, yf = (a.ravel() for a in np.broadcast_arrays(x, y))
        out = np.full(len(xf), float(self.background))
        if len(xf) == 0:
            return out.reshape(shape)
        cell = _CUTOFF_SIGMAS * float(np.max(self.radii))
        cx = np.floor(xf / cell).astype(np.int64)
        cy = np.floor(yf / cell).astype(np.int64)
        cx0, cy0 = cx.min(), cy.min()
        ncx = int(cx.max() - cx0 + 1)
        key = (cy - cy0) * ncx + (cx - cx0)
        order = np.argsort(key, kind="stable")
        skey = key[order]
        ncy = int(cy.max() - cy0 + 1)
        starts = np.searchsorted(skey, np.arange(ncx * ncy + 1))
        for (bx, by), r, a in zip(self.centers, self.radii, self.amplitudes):
            reach = _CUTOFF_SIGMAS * r
            i0 = max(int(np.floor((bx - reach) / cell)) - cx0, 0)
            i1 = min(int(np.floor((bx + reach) / cell)) - cx0, ncx - 1)
            j0 = max(int(np.floor((by - reach) / cell)) - cy0, 0)
            j1 = min(int(np.floor((by + reach) / cell)) - cy0, ncy - 1)
            if i0 > i1 or j0 > j1:
                continue
            idx = np.concatenate(
                [order[starts[j * ncx + i0] : starts[j * ncx + i1 + 1]] for j in range(j0, j1 + 1)]
            )
            if len(idx) == 0:
                continue
            idx.sort()
            d2 = (xf[idx] - bx) ** 2 + (yf[idx] - by) ** 2
            near = d2 < reach * reach
            idx = idx[near]
            out[idx] += a * np.exp(-0.5 * d2[near] / (r * r))
        return out.reshape(shape)

    def rasterize(self, width: int, height: int) -> np.ndarray:
        yy, xx = np.mgrid[0:height, 0:width].astype(float)
        return np.clip(self.evaluate(xx, yy), 0.0, 1.0)


def generate_speckle(
    size,
    blob_count: int | None = None,
    radius_range=(2.0, 4.0),
    amplitude_range=(0.5, 0.9),
    background: float = 0.05,
    seed: int = 0,
    coverage: float = 0.55,
):
    """Random Gaussian-blob speckle pattern and its rasterization.

    ``size`` is ``(width, height)``.  When ``blob_count`` is omitted it is
    chosen so that blob disks of radius ``1.5 sigma`` cover ``coverage`` of
    the image on average.
    """
    width, height = (size, size) if np.isscalar(size) else size
    if width <= 0 or height <= 0:
        raise ValueError("image size must be positive")
    rmin, rmax = radius_range
    if rmin < 1.0:
        raise ValueError("minimum blob radius must be >= 1 px")
    rng = make_rng(seed)
    if blob_count is None:
        mean_area = np.pi * (1.5**2) * (rmin**2 + rmin * rmax + rmax**2) / 3.0
        blob_count = max(1, int(round(coverage * width * height / mean_area)))
    if blob_count <= 0:
        raise ValueError("blob_count must be positive")
    centers = np.column_stack(
        [rng.uniform(-rmax, width - 1 + rmax, blob_count), rng.uniform(-rmax, height - 1 + rmax, blob_count)]
    )
    radii = rng.uniform(rmin, rmax, blob_count)
    amps = rng.uniform(*amplitude_range, blob_count)
    pattern = SpecklePattern(centers, radii, amps, background)
    return pattern, pattern.rasterize(width, height)


class DeformationField:
    """Analytic displacement ``(u, v)`` with small-strain components."""

    name = "custom"

    def displacement(self, x, y):
        raise NotImplementedError

    def strain(self, x, y):
        raise NotImplementedError

    def params(self) -> dict:
        return {"kind": self.name}


@dataclass
class Sinusoid(DeformationField):
    """``u = A sin(w x)``, ``v = 0``."""

    amplitude: float = 0.05
    frequency: float = 0.05
    name: str = field(default="sinusoid", init=False)

    def displacement(self, x, y):
        x = np.asarray(x, dtype=float)
        return self.amplitude * np.sin(self.frequency * x), np.zeros(np.broadcast(x, y).shape)

    def strain(self, x, y):
        x = np.asarray(x, dtype=float)
        zero = np.zeros(np.broadcast(x, y).shape)
        return self.amplitude * self.frequency * np.cos(self.frequency * x) + zero, zero, zero

    def params(self):
        return {"kind": self.name, "A": self.amplitude, "w": self.frequency}


@dataclass
class Translation(DeformationField):
    tx: float = 0.05
    ty: float = 0.0
    name: str = field(default="translation", init=False)

    def displacement(self, x, y):
        shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
        return np.full(shape, float(self.tx)), np.full(shape, float(self.ty))

    def strain(self, x, y):
        zero = np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
        return zero, zero, zero

    def params(self):
        return {"kind": self.name, "tx": self.tx, "ty": self.ty}


@dataclass
class StarLike(DeformationField):
    """Vertical chirp ``v = A cos(2 pi (y - yc) / period(x))``, ``u = 0``.

    The period grows linearly from ``period_min`` at ``x_start`` to
    ``period_max`` at ``x_end``, so along the centre row ``y = yc`` the true
    displacement is the constant ``A`` while the local spatial frequency
    sweeps from fine to coarse.
    """

    amplitude: float = 0.1
    period_min: float = 10.0
    period_max: float = 200.0
    x_start: float = 0.0
    x_end: float = 1000.0
    y_center: float = 120.0
    name: str = field(default="star", init=False)

    def period(self, x):
        t = (np.asarray(x, dtype=float) - self.x_start) / (self.x_end - self.x_start)
        return self.period_min + (self.period_max - self.period_min) * t

    def _phase(self, x, y):
        return 2 * np.pi * (np.asarray(y, dtype=float) - self.y_center) / self.period(x)

    def displacement(self, x, y):
        ph = self._phase(x, y)
        return np.zeros_like(ph), self.amplitude * np.cos(ph)

    def strain(self, x, y):
        lam = self.period(x)
        dlam = (self.period_max - self.period_min) / (self.x_end - self.x_start)
        ph = self._phase(x, y)
        sin = np.sin(ph)
        dv_dy = -self.amplitude * sin * 2 * np.pi / lam
        dv_dx = self.amplitude * sin * ph * dlam / lam
        return np.zeros_like(ph), dv_dy, 0.5 * dv_dx

    def params(self):
        d = asdict(self)
        d["kind"] = d.pop("name")
        return d


@dataclass
class CustomField(DeformationField):
    u_fn: Callable
    v_fn: Callable
    strain_fn: Callable | None = None
    name: str = field(default="custom", init=False)

    def displacement(self, x, y):
        return np.asarray(self.u_fn(x, y), dtype=float), np.asarray(self.v_fn(x, y), dtype=float)

    def strain(self, x, y):
        if self.strain_fn is None:
            raise NotImplementedError("custom field has no analytic strain")
        return self.strain_fn(x, y)


def field_from_params(params: dict) -> DeformationField:
    kind = params.get("kind")
    if kind == "sinusoid":
        return Sinusoid(params["A"], params["w"])
    if kind == "translation":
        return Translation(params["tx"], params.get("ty", 0.0))
    if kind == "star":
        keys = ("amplitude", "period_min", "period_max", "x_start", "x_end", "y_center")
        return StarLike(**{k: params[k] for k in keys})
    raise ValueError(f"cannot rebuild deformation of kind {kind!r}")


def warp_render(pattern: SpecklePattern, deformation: DeformationField, width: int, height: int) -> np.ndarray:
    """Deformed image ``g(x) = f(x - u(x))`` sampled at pixel centres."""
    yy, xx = np.mgrid[0:height, 0:width].astype(float)
    u, v = deformation.displacement(xx, yy)
    return np.clip(pattern.evaluate(xx - u, yy - v), 0.0, 1.0)


def add_noise(image: np.ndarray, sigma: float, seed: int = 0) -> np.ndarray:
    """Additive i.i.d. Gaussian noise, clamped to ``[0, 1]``."""
    if sigma < 0:
        raise ValueError("noise sigma must be >= 0")
    img = np.asarray(image, dtype=float)
    if sigma == 0:
        return img.copy()
    return np.clip(img + make_rng(seed).normal(0.0, sigma, img.shape), 0.0, 1.0)


def ground_truth(deformation: DeformationField, points) -> dict:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    u, v = deformation.displacement(pts[:, 0], pts[:, 1])
    exx, eyy, exy = deformation.strain(pts[:, 0], pts[:, 1])
    return {"u": u, "v": v, "exx": exx, "eyy": eyy, "exy": exy}


@dataclass(frozen=True)
class Preset:
    name: str
    width: int
    height: int
    zoi: tuple  # (x0, y0, width, height)
    deformation: DeformationField
    radius_range: tuple = (2.0, 4.0)
    noise: float = 0.0
    element_size: int = 20


def preset(name: str) -> Preset:
    """Benchmark image pairs.

    ``example1``: large spots, ``u = 0.05 sin(0.05 x)``.  ``example2``: small
    random spots with mild noise, ``w = 0.2``.  ``star-like``: vertical chirp
    for resolution studies.  ``translation``: rigid 0.05 px shift.
    """
    if name == "example1":
        return Preset(name, 500, 500, (49, 49, 400, 400), Sinusoid(0.05, 0.05), (2.0, 4.0), 0.0, 20)
    if name == "example2":
        return Preset(name, 500, 500, (49, 49, 400, 400), Sinusoid(0.05, 0.2), (1.0, 2.5), 0.01, 8)
    if name == "star-like":
        star = StarLike(amplitude=0.1, period_min=10.0, period_max=200.0, x_start=20.0, x_end=1020.0, y_center=120.0)
        return Preset(name, 1041, 241, (20, 20, 1000, 200), star, (1.2, 2.5), 0.0, 10)
    if name == "translation":
        return Preset(name, 240, 240, (19, 19, 200, 200), Translation(0.05, 0.0), (2.0, 4.0), 0.0, 20)
    raise ValueError(f"unknown preset {name!r}; choose example1, example2, star-like or translation")


def render_pair(p: Preset, seed: int = 0):
    """Reference and deformed images for a preset (noise drawn independently)."""
    pattern, ref = generate_speckle((p.width, p.height), radius_range=p.radius_range, seed=seed)
    deformed = warp_render(pattern, p.deformation, p.width, p.height)
    if p.noise > 0:
        ref = add_noise(ref, p.noise, seed + 1)
        deformed = add_noise(deformed, p.noise, seed + 2)
    return pattern, ref, deformed


def write_truth(path, p: Preset, seed: int, extra: dict | None = None):
    """JSON sidecar recording deformation parameters, ZoI and seed."""
    doc = {
        "format": "cfedic-truth/1",
        "preset": p.name,
        "seed": int(seed),
        "image_size": [p.width, p.height],
        "zoi": list(p.zoi),
        "noise_sigma": p.noise,
        "deformation": p.deformation.params(),
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2))
    return doc
