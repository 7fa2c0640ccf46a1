"""Mesh extraction, simplification, texture atlas baking and export."""

from .atlas import Atlas, build_atlas, uv_to_point, uv_to_texel
from .export import asset_files, export_asset, load_textures
from .marching import cell_size, marching_cubes, marching_cubes_grid, sample_grid
from .mesh import TriangleMesh, icosphere, read_obj, write_obj
from .simplify import simplify
from .textures import PbrTextureSet, bake_textures, decode_normals, encode_normals

__all__ = [
    "Atlas", "PbrTextureSet", "TriangleMesh", "asset_files", "bake_textures", "build_atlas",
    "cell_size", "decode_normals", "encode_normals", "export_asset", "icosphere", "load_textures",
    "marching_cubes", "marching_cubes_grid", "read_obj", "sample_grid", "simplify",
    "uv_to_point", "uv_to_texel", "write_obj",
]
