"""Convolution finite element (C-FE) global digital image correlation."""

__version__ = "0.1.0"

from .dic import DicConfig, DicSolution, run_dic
from .grayscale import build_gray_model, decompose, load_image, save_image
from .kernel import KernelParams, NodalPatch, build_rbf_interpolant, cubic_spline_kernel
from .mesh import ZoneOfInterest, build_connectivity, build_mesh
from .metrics import l2_error, mei, measurement_resolution, rmse, spatial_resolution
from .postprocess import compute_strain, line_cut, sample_displacement
from .shapes import CfeParams, build_patch_topology, shape_table
from .synth import generate_speckle, preset, render_pair

__all__ = [
    "__version__",
    "CfeParams",
    "DicConfig",
    "DicSolution",
    "KernelParams",
    "NodalPatch",
    "ZoneOfInterest",
    "build_connectivity",
    "build_gray_model",
    "build_mesh",
    "build_patch_topology",
    "build_rbf_interpolant",
    "compute_strain",
    "cubic_spline_kernel",
    "decompose",
    "generate_speckle",
    "l2_error",
    "line_cut",
    "load_image",
    "measurement_resolution",
    "mei",
    "preset",
    "render_pair",
    "rmse",
    "run_dic",
    "sample_displacement",
    "save_image",
    "shape_table",
    "spatial_resolution",
]
