"""Inverse rendering of shape and principled reflectance from flash/no-flash captures.

Subpackages and modules:

* ``brdf``: co-located and bidirectional principled BRDF with analytic gradients
* ``scene``: signed distance geometry, textel fields and scene JSON
* ``photometry``: flashlight and ambient image formation, losses
* ``renderer``: volumetric SDF renderer with its backward pass
* ``inverse``: optimisation of reflectance, flash intensity and shape
* ``meshing``: marching cubes, simplification, atlas baking and asset export
* ``evaluation``: surface distance, normal/depth errors, PSNR and SSIM
* ``dataset`` and ``cli``: capture datasets and the command-line tool
"""

from .brdf import TextelParams, eval_brdf, eval_brdf_bidirectional
from .photometry import EnvironmentMap, Flashlight
from .renderer import CaptureView, Intrinsics, RenderOptions, look_at, render_view
from .scene import SdfScene, load_scene, save_scene

__version__ = "0.1.0"

__all__ = [
    "CaptureView", "EnvironmentMap", "Flashlight", "Intrinsics", "RenderOptions", "SdfScene",
    "TextelParams", "eval_brdf", "eval_brdf_bidirectional", "load_scene", "look_at", "render_view",
    "save_scene",
]
