"""Asset export: OBJ + MTL, PNG texture maps and a JSON sidecar."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..hdr import srgb_encode, write_png8, write_png16
from .mesh import TriangleMesh, write_obj
from .textures import PbrTextureSet, encode_normals

# MTL keys follow the common PBR extension of the format
_MTL_KEYS = {
    "roughness": "map_Pr",
    "metallic": "map_Pm",
    "clearcoat": "map_Pc",
    "clearcoat_glossiness": "map_Pcr",
    "subsurface": "map_Ps",
    "dielectric": "map_Ks",
}


def asset_files(path) -> dict[str, Path]:
    """Every file ``export_asset`` writes for the OBJ path ``path``."""
    obj = Path(path)
    if obj.suffix.lower() != ".obj":
        obj = obj.with_suffix(".obj")
    stem = obj.stem
    d = obj.parent
    files = {
        "obj": obj,
        "mtl": d / f"{stem}.mtl",
        "sidecar": d / f"{stem}.json",
        "base_color": d / f"{stem}_base_color.png",
        "normal": d / f"{stem}_normal.png",
    }
    for name in _MTL_KEYS:
        files[name] = d / f"{stem}_{name}.png"
    return files


def export_asset(mesh: TriangleMesh, textures: PbrTextureSet, path, overwrite: bool = False) -> dict[str, Path]:
    """Write the textured mesh; returns the mapping of written files.

    Raises ``FileExistsError`` if any target exists and ``overwrite`` is off.
    """
    if mesh.uvs is None:
        raise ValueError("mesh has no UVs; build an atlas first")
    files = asset_files(path)
    if not overwrite:
        clash = [str(p) for p in files.values() if p.exists()]
        if clash:
            raise FileExistsError(f"refusing to overwrite existing files: {', '.join(clash)}")
    files["obj"].parent.mkdir(parents=True, exist_ok=True)

    write_png8(files["base_color"], srgb_encode(textures.base_color))
    for name in _MTL_KEYS:
        write_png8(files[name], textures.scalars[name])
    write_png16(files["normal"], encode_normals(textures.normal))

    stem = files["obj"].stem
    mtl = [
        f"newmtl {stem}",
        "Ka 1 1 1",
        "Kd 1 1 1",
        "Ks 0 0 0",
        "illum 2",
        f"map_Kd {files['base_color'].name}",
    ]
    mtl += [f"{key} {files[name].name}" for name, key in _MTL_KEYS.items()]
    mtl.append(f"norm {files['normal'].name}")
    files["mtl"].write_text("\n".join(mtl) + "\n")
    write_obj(files["obj"], mesh, normals=mesh.vertex_normals(), mtl_name=files["mtl"].name, material=stem)

    sidecar = {
        "units": "meters",
        "up_axis": "+Y",
        "handedness": "right",
        "resolution": int(textures.resolution),
        "maps": {
            "base_color": {"file": files["base_color"].name, "encoding": "srgb", "bits": 8, "channels": 3},
            "normal": {
                "file": files["normal"].name,
                "encoding": "linear, (n + 1) / 2",
                "space": "object",
                "bits": 16,
                "channels": 3,
            },
            **{
                name: {"file": files[name].name, "encoding": "linear", "bits": 8, "channels": 1,
                       "mtl_key": key}
                for name, key in _MTL_KEYS.items()
            },
        },
        "uv_layout": "one isolated chart per triangle with half-texel gutters",
        "n_vertices": int(len(mesh.vertices)),
        "n_faces": int(mesh.n_faces),
    }
    files["sidecar"].write_text(json.dumps(sidecar, indent=2) + "\n")
    return files


def load_textures(path) -> PbrTextureSet:
    """Read back the maps written by ``export_asset`` (base colour decoded to linear)."""
    from ..hdr import read_png, srgb_decode
    from .textures import decode_normals

    files = asset_files(path)
    base = srgb_decode(read_png(files["base_color"]))
    scalars = {name: read_png(files[name]) for name in _MTL_KEYS}
    normal = decode_normals(read_png(files["normal"]))
    return PbrTextureSet(base, scalars, normal)
