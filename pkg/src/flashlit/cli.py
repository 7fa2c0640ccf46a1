"""Command-line entry point.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.  Failures print
a JSON object ``{"error", "message", "exit_code"}`` on stderr and, when an
output directory is known, also write it to ``<out>/error.json``.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise CliError("config must be a JSON object")
    return cfg


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    if args.out is None:
        raise CliError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args, cfg) -> dict:
    from .dataset import SynthConfig, bundled_scene_path, save_dataset, synthesize
    from .scene import load_scene

    scene_path = Path(args.scene) if args.scene else bundled_scene_path()
    scene = load_scene(scene_path)
    config = SynthConfig.from_dict(cfg)
    out = _out_dir(args)
    ds = synthesize(scene, config, seed=args.seed, threads=args.threads, scene_ref="scene.json")
    save_dataset(ds, out, scene)
    m = ds.manifest
    return {"manifest": "manifest.json", "n_images": len(m.entries), "n_flash": m.n_flash,
            "gamma": m.gamma}


# ---------------------------------------------------------------------------
# fit


def _observations(ds, ids):
    from .inverse import Observation

    views = ds.manifest.views()
    return [Observation(views[i], ds.images[i]) for i in ids]


def _initial_scene(ds, root, cfg):
    from .brdf import TextelParams
    from .dataset import load_scene_ref
    from .scene import ConstantTextel, SdfScene, Sphere, scene_from_dict

    m = ds.manifest
    if "scene" in cfg:
        base = scene_from_dict(cfg["scene"], root)
    else:
        truth = load_scene_ref(m, root)
        if truth is not None:
            base = truth
        else:
            base = SdfScene(Sphere(m.roi_center, 0.6 * m.roi_radius), roi_center=m.roi_center,
                            roi_radius=m.roi_radius)
    init = cfg.get("init_theta")
    if init is None:
        theta = np.full(9, 0.5)
        tex = ConstantTextel(TextelParams.from_array(theta))
    else:
        tex = ConstantTextel(TextelParams.from_dict(init))
    return base.with_texel(tex)


def cmd_fit(args, cfg) -> dict:
    from .dataset import load_dataset, load_scene_ref, normalize_exposure
    from .inverse import FitConfig, FitProblem, calibrate_gamma, fit
    from .renderer import RenderOptions
    from .scene import save_scene

    ds, root = load_dataset(args.manifest)
    ds = normalize_exposure(ds)
    m = ds.manifest
    held = set(int(i) for i in cfg.get("held_out", []))
    ids = [int(i) for i in cfg.get("views", range(len(m.entries))) if int(i) not in held]
    if not ids:
        raise CliError("no views selected for fitting")
    free = tuple(cfg.get("free", ("theta",) if m.calibration else ("theta", "gamma")))
    gamma_src = cfg.get("gamma", "calibration" if m.calibration else "manifest")
    if gamma_src == "calibration":
        if not m.calibration:
            raise CliError("manifest carries no calibration patch")
        c = m.calibration
        gamma = calibrate_gamma(c["reading"], c["albedo"], c["distance"])
    elif gamma_src == "manifest":
        gamma = m.gamma
    else:
        gamma = float(gamma_src)

    options = RenderOptions.from_dict({**m.render, **cfg.get("render", {})})
    options = replace(options, threads=args.threads)
    fcfg = FitConfig.from_dict({"seed": args.seed, **cfg.get("fit", {})})
    scene = _initial_scene(ds, root, cfg)
    problem = FitProblem(_observations(ds, ids), scene, free, gamma=gamma, env=ds.environment(),
                         options=options)
    result = fit(problem, fcfg)

    out = _out_dir(args)
    save_scene(result.scene, out / "fitted_scene.json")
    theta = result.scene.texel_field.params()
    from .brdf import PARAM_NAMES

    report = {
        "free": list(free),
        "views": ids,
        "gamma": result.gamma,
        "sharpness": result.sharpness,
        "params": result.param_dict(),
        "theta": {n: float(v) for n, v in zip(PARAM_NAMES, theta[:9])},
        "iterations": result.iterations,
        "final_loss": float(np.mean(result.history[-50:])) if result.history else None,
        "loss_history": [float(x) for x in result.history[::max(1, len(result.history) // 200)]],
        "config": fcfg.to_dict(),
    }
    truth = load_scene_ref(m, root)
    if truth is not None and truth.texel_field.params().size == theta.size:
        t = truth.texel_field.params()
        report["truth_errors"] = {n: float(abs(a - b)) for n, a, b in zip(PARAM_NAMES, theta, t)}
    _write_json(out / "fit_report.json", report)
    return {"report": "fit_report.json", "scene": "fitted_scene.json", "final_loss": report["final_loss"]}


# ---------------------------------------------------------------------------
# mesh


def cmd_mesh(args, cfg) -> dict:
    from .meshing import bake_textures, build_atlas, export_asset, marching_cubes, simplify
    from .scene import load_scene

    scene = load_scene(args.scene)
    res = int(cfg.get("resolution", 128))
    target = int(cfg.get("target_faces", 5000))
    tex_res = int(cfg.get("texture_resolution", 2048))
    mesh = marching_cubes(scene, res)
    if mesh.is_empty:
        raise CliError("the scene's zero level set is empty inside its ROI")
    mesh = simplify(mesh, target)
    mesh_uv, atlas = build_atlas(mesh, tex_res)
    textures = bake_textures(scene, atlas)
    out = _out_dir(args)
    files = export_asset(mesh_uv, textures, out / cfg.get("name", "asset.obj"), overwrite=args.overwrite)
    return {"files": sorted(p.name for p in files.values()), "n_faces": mesh.n_faces,
            "n_vertices": len(mesh.vertices)}


# ---------------------------------------------------------------------------
# eval


def _load_surface(path, resolution):
    from .meshing import marching_cubes, read_obj
    from .scene import load_scene

    p = Path(path)
    if p.suffix.lower() == ".obj":
        if not p.exists():
            raise CliError(f"missing mesh {p}")
        return read_obj(p), None
    scene = load_scene(p)
    return marching_cubes(scene, resolution), scene


def cmd_eval(args, cfg) -> dict:
    from .evaluation import (MetricReport, depth_error, mesh_object_length, normal_error, psnr_ssim,
                             surface_distance)
    from .renderer import RenderOptions, render_view

    res = int(cfg.get("resolution", 128))
    pred_mesh, pred_scene = _load_surface(args.pred, res)
    gt_mesh, gt_scene = _load_surface(args.gt, res)
    if pred_mesh.is_empty or gt_mesh.is_empty:
        raise CliError("cannot evaluate an empty surface")
    report = MetricReport()
    length = gt_scene.object_length() if gt_scene is not None else mesh_object_length(gt_mesh)

    views = None
    ds = None
    if args.manifest:
        from .dataset import load_dataset, normalize_exposure

        ds, _ = load_dataset(args.manifest)
        ds = normalize_exposure(ds)
        ids = [int(i) for i in cfg.get("views", range(len(ds.manifest.entries)))]
        views = [ds.manifest.views()[i] for i in ids]

    vis = views if (views is not None and cfg.get("visibility", False)) else None
    mean, median = surface_distance(pred_mesh, gt_mesh, visibility=vis, seed=args.seed)
    report.set_distance(mean, median, length)

    if views is not None and pred_scene is not None and gt_scene is not None:
        opts = replace(RenderOptions.from_dict(ds.manifest.render), threads=args.threads)
        env = ds.environment()
        normals, depths, psnrs, ssims = [], [], [], []
        for v in views:
            a = render_view(pred_scene, v, env, opts)
            b = render_view(gt_scene, v, env, opts)
            valid = (a.alpha > 0.5) & (b.alpha > 0.5)
            if valid.any():
                normals.append(normal_error(a.normal, b.normal, valid))
                depths.append(depth_error(a.depth, b.depth, valid, length))
            p, s = psnr_ssim(a.rgb, b.rgb)
            psnrs.append(p)
            ssims.append(s)
        if normals:
            report.normal_mean = float(np.mean([x[0] for x in normals]))
            report.normal_median = float(np.median([x[1] for x in normals]))
            report.depth_mean = float(np.mean([x[0] for x in depths]))
            report.depth_median = float(np.median([x[1] for x in depths]))
        report.psnr = float(np.mean(psnrs))
        report.ssim = float(np.mean(ssims))

    out = _out_dir(args)
    (out / "metrics.json").write_text(report.to_json())
    (out / "metrics.txt").write_text(report.to_table())
    return {"report": "metrics.json", **{k: v for k, v in report.to_dict().items() if k != "extra"}}


# ---------------------------------------------------------------------------
# figures


def contact_sheet(images, cols: int = 8, pad: int = 2) -> np.ndarray:
    """Tile equally sized ``(H, W, 3)`` images in [0, 1] into one grid."""
    if not images:
        raise CliError("nothing to lay out")
    h, w = images[0].shape[:2]
    rows = (len(images) + cols - 1) // cols
    cols = min(cols, len(images))
    sheet = np.ones((rows * (h + pad) + pad, cols * (w + pad) + pad, 3))
    for i, img in enumerate(images):
        r, c = divmod(i, cols)
        y, x = pad + r * (h + pad), pad + c * (w + pad)
        sheet[y:y + h, x:x + w] = img
    return sheet


def cmd_figures(args, cfg) -> dict:
    from .dataset import load_dataset, normalize_exposure
    from .hdr import tonemap, write_png8
    from .renderer import RenderOptions, render_view
    from .scene import load_scene

    ds, _ = load_dataset(args.manifest)
    ds = normalize_exposure(ds)
    limit = int(cfg.get("max_images", 16))
    cols = int(cfg.get("columns", 8))
    ids = list(range(min(limit, len(ds.images))))
    out = _out_dir(args)
    written = []
    write_png8(out / "inputs.png", contact_sheet([tonemap(ds.images[i]) for i in ids], cols))
    written.append("inputs.png")
    if args.scene:
        scene = load_scene(args.scene)
        opts = replace(RenderOptions.from_dict(ds.manifest.render), threads=args.threads)
        env = ds.environment()
        views = ds.manifest.views()
        renders, normals = [], []
        for i in ids:
            r = render_view(scene, views[i], env, opts)
            renders.append(tonemap(r.rgb))
            normals.append(np.where(r.alpha[..., None] > 0.5, 0.5 * (r.normal + 1.0), 1.0))
        write_png8(out / "renders.png", contact_sheet(renders, cols))
        write_png8(out / "normals.png", contact_sheet(normals, cols))
        written += ["renders.png", "normals.png"]
    return {"figures": written}


# ---------------------------------------------------------------------------
# flash-isolate


def cmd_flash_isolate(args, cfg) -> dict:
    from .hdr import read_pfm, write_pfm, write_png8
    from .inverse import flash_isolate

    for p in (args.flash, args.noflash):
        if not Path(p).exists():
            raise CliError(f"missing image {p}")
    try:
        iso = flash_isolate(read_pfm(args.flash), read_pfm(args.noflash), float(cfg.get("threshold", 1.0)))
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    out = _out_dir(args)
    write_pfm(out / "flash_only.pfm", iso.rgb)
    write_png8(out / "flash_only_mask.png", iso.mask.astype(np.float64))
    return {"image": "flash_only.pfm", "mask": "flash_only_mask.png",
            "valid_fraction": float(np.mean(iso.mask))}


# ---------------------------------------------------------------------------
# argument parsing


def _common(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(0), help="random seed (default 0)")
    parser.add_argument("--threads", type=int, default=d(1), help="worker threads for rendering")
    parser.add_argument("--config", default=d(None), help="JSON file with command options")
    parser.add_argument("--out", default=d(None), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flashlit", description=__doc__.splitlines()[0])
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _common(common, suppress=True)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic capture dataset")
    p.add_argument("scene", nargs="?", help="scene JSON (default: bundled sphere)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", parents=[common], help="fit shape and reflectance to a dataset")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("mesh", parents=[common], help="extract a textured mesh from a scene")
    p.add_argument("scene")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("eval", parents=[common], help="compare a reconstruction with ground truth")
    p.add_argument("pred", help="predicted scene JSON or OBJ mesh")
    p.add_argument("gt", help="ground-truth scene JSON or OBJ mesh")
    p.add_argument("--manifest", help="dataset whose views drive the image metrics")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("figures", parents=[common], help="contact sheets of inputs and re-renders")
    p.add_argument("manifest")
    p.add_argument("--scene", help="scene to re-render")
    p.set_defaults(func=cmd_figures)

    p = sub.add_parser("flash-isolate", parents=[common], help="flash-only image from a flash/no-flash pair")
    p.add_argument("flash")
    p.add_argument("noflash")
    p.set_defaults(func=cmd_flash_isolate)
    return parser


def _fail(args, kind: str, message: str, code: int) -> int:
    payload = {"error": kind, "message": message, "exit_code": code}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    out = getattr(args, "out", None)
    if out:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            _write_json(Path(out) / "error.json", payload)
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    from .inverse import FitDiverged, NumericalError

    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        return _fail(args, "CliError", "--threads must be at least 1", EXIT_INVALID)
    try:
        cfg = _load_config(args.config)
        summary = args.func(args, cfg)
    except CliError as exc:
        return _fail(args, "CliError", str(exc), exc.code)
    except (NumericalError, FitDiverged, FloatingPointError) as exc:
        return _fail(args, type(exc).__name__, str(exc), EXIT_NUMERICAL)
    except (ValueError, KeyError, TypeError, FileNotFoundError, FileExistsError, OSError) as exc:
        return _fail(args, type(exc).__name__, str(exc), EXIT_INVALID)
    print(json.dumps({"command": args.command, **summary}, sort_keys=True, default=float))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
