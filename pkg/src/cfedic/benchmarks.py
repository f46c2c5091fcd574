"""Benchmark drivers shared by the experiment scripts, the CLI and the tests.

Each driver renders a synthetic pair from a preset, runs one or more DIC
discretizations on it and scores the result against the analytic truth.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .dic import DicConfig, build_models, run_dic
from .mesh import ZoneOfInterest
from .metrics import evaluate_solution, measurement_resolution, mei, spatial_resolution
from .postprocess import line_cut, sample_displacement
from .synth import Preset, add_noise, generate_speckle, preset, render_pair, warp_render

# fixture shifts (px) of the star centre row relative to the mesh; SR of a
# single cut depends on where the cut sits inside an element row
STAR_ALIGNMENTS = (0.0, 5.0, 10.0, 15.0)


def quantize(img, bits: int = 8):
    levels = 2**bits - 1
    return np.round(np.clip(img, 0.0, 1.0) * levels) / levels


def error_table(name: str, methods, seed: int = 0, bits: int | None = 8, **config) -> list[dict]:
    """RMSE / L2 rows for ``methods = [(element, h), ...]`` on one preset pair."""
    p = preset(name)
    _, ref, deformed = render_pair(p, seed)
    if bits:
        ref, deformed = quantize(ref, bits), quantize(deformed, bits)
    zoi = ZoneOfInterest(*p.zoi)
    models = build_models(ref, deformed, DicConfig(**config))
    rows = []
    for element, h in methods:
        sol = run_dic(ref, deformed, zoi, DicConfig(element=element, element_size=h, **config), models=models)
        ev = evaluate_solution(sol, p.deformation)
        rows.append(
            {
                "method": sol.conn.label,
                "element": element,
                "element_size": h,
                "rmse_u": ev["u"].rmse,
                "l2_u": ev["u"].l2_relative,
                "rmse_exx": ev["exx"].rmse,
                "l2_exx": ev["exx"].l2_relative,
                "pcg_iterations": sol.iterations,
                "residual": sol.residual,
                "n_nodes": sol.n_nodes,
                "timings": sol.timings,
            }
        )
    return rows


def star_preset(shift: float = 0.0, noise: float = 0.0) -> Preset:
    base = preset("star-like")
    star = dataclasses.replace(base.deformation, y_center=base.deformation.y_center + shift)
    return dataclasses.replace(base, deformation=star, noise=noise)


def star_cut(solution, p: Preset):
    """Row cut of ``v`` through the star centre (true value ``A`` all along)."""
    zoi = solution.mesh.zoi
    offset = p.deformation.y_center - (zoi.y0 + 0.5 * zoi.height)
    return line_cut(lambda q: sample_displacement(solution, q).component("v"), zoi, "row", offset)


@dataclass
class StarResult:
    element: str
    element_size: int
    shifts: tuple
    positions: list  # SR per shift (None when not found)
    periods: list  # local chirp period at each SR position
    noise: float
    fit_residuals: list = field(default_factory=list)

    @property
    def mean(self) -> float | None:
        found = [s for s in self.positions if s is not None]
        if len(found) != len(self.positions):
            return None
        return float(np.mean(found))


def star_spatial_resolution(
    elements, sizes, shifts=STAR_ALIGNMENTS, noise: float = 0.0, seed: int = 0, fit_degree: int = 8, **config
) -> dict:
    """SR of each ``(element, h)`` on the star fixture, per alignment shift.

    Returns ``{(element, h): StarResult}``; every method sees the same images.
    """
    out = {(el, h): StarResult(el, h, tuple(shifts), [], [], noise) for el in elements for h in sizes}
    for shift in shifts:
        p = star_preset(shift, noise)
        _, ref, deformed = render_pair(p, seed)
        zoi = ZoneOfInterest(*p.zoi)
        models = build_models(ref, deformed, DicConfig(**config))
        for el in elements:
            for h in sizes:
                sol = run_dic(ref, deformed, zoi, DicConfig(element=el, element_size=h, **config), models=models)
                cut = star_cut(sol, p)
                sr = spatial_resolution(cut.positions, cut.values, p.deformation.amplitude, fit_degree)
                res = out[(el, h)]
                res.positions.append(sr.position)
                res.periods.append(None if sr.position is None else float(p.deformation.period(zoi.x0 + sr.position)))
                res.fit_residuals.append(sr.fit_residual)
    return out


def noise_floor_resolution(elements, sizes, sigma: float, seed: int = 0, **config) -> dict:
    """MR from a reference and an undeformed noisy copy of the star speckle.

    Both images carry independent Gaussian noise of std ``sigma``; MR is the
    sample std of ``v`` along the star centre row.
    """
    p = star_preset()
    pattern, clean = generate_speckle((p.width, p.height), radius_range=p.radius_range, seed=seed)
    ref = add_noise(clean, sigma, seed + 1)
    floor = add_noise(clean, sigma, seed + 3)
    zoi = ZoneOfInterest(*p.zoi)
    models = build_models(ref, floor, DicConfig(**config))
    out = {}
    for el in elements:
        for h in sizes:
            sol = run_dic(ref, floor, zoi, DicConfig(element=el, element_size=h, **config), models=models)
            out[(el, h)] = measurement_resolution(star_cut(sol, p).values)
    return out


def mei_table(elements, sizes, sigma: float, seed: int = 0, shifts=STAR_ALIGNMENTS, **config) -> dict:
    """``{(element, h): {"sr", "mr", "mei"}}`` on the noisy star fixture."""
    srs = star_spatial_resolution(elements, sizes, shifts, noise=sigma, seed=seed, **config)
    mrs = noise_floor_resolution(elements, sizes, sigma, seed, **config)
    out = {}
    for key, res in srs.items():
        sr = res.mean
        out[key] = {"sr": sr, "mr": mrs[key], "mei": None if sr is None else mei(sr, mrs[key]), "sr_per_shift": res.positions}
    return out


def translation_errors(element: str, h: int = 20, seed: int = 0, **config) -> float:
    """RMS nodal error on the rigid-translation preset."""
    p = preset("translation")
    pattern, ref = generate_speckle((p.width, p.height), radius_range=p.radius_range, seed=seed)
    deformed = warp_render(pattern, p.deformation, p.width, p.height)
    sol = run_dic(ref, deformed, ZoneOfInterest(*p.zoi), DicConfig(element=element, element_size=h, **config))
    nodes = sol.conn.node_coords
    tu, tv = p.deformation.displacement(nodes[:, 0], nodes[:, 1])
    err = np.concatenate([sol.nodal[:, 0] - tu, sol.nodal[:, 1] - tv])
    return float(np.sqrt(np.mean(err**2)))
