"""Command-line pipeline: init, reconstruct, metrics, render, convert.

Exit codes are a stable contract: 0 success, 1 runtime failure, 2 usage or
input error (bad flags, missing or malformed files).
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import json
import logging
import os
import sys
import time

import numpy as np
import scipy

from . import __version__
from .initialization import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    DEFAULT_GRID_RESOLUTION,
    build_coverage_problem,
    carve_visual_hull,
    distance_transform,
    load_init_json,
    solve_set_cover_greedy,
    write_init_json,
)
from .metrics import (
    MetricReport,
    apply_rigid_transform,
    area_length_ratio,
    cc_diff,
    chamfer,
    connected_components,
    edge_chamfer,
    edge_f_score,
    f_score,
    icp_align,
    manifoldness_check,
    normal_consistency,
    sample_surface_points,
    volume_iou,
)
from .optimizer import load_config, reconstruct
from .renderer import (
    RenderConfig,
    load_cameras,
    load_views,
    render_depth,
    render_normal,
    render_silhouette_soft,
    write_depth_npy,
    write_depth_png16,
    write_mask,
    write_normal_npy,
    write_normal_png,
)
from .report import (
    plot_loss_curves,
    plot_metrics_bar,
    write_iteration_csv,
    write_metrics_csv,
    write_metrics_json,
)
from .tet_mesh import (
    MeshError,
    SurfaceMesh,
    boundary_faces,
    generate_unit_tetsphere,
    instantiate_spheres,
    load_obj,
    load_tetmesh,
    save_obj,
    save_tetmesh,
    union_surfaces,
)

log = logging.getLogger(__name__)


class UsageError(Exception):
    """Bad invocation or unreadable/malformed input; exits with code 2."""


def _require_file(path) -> str:
    if not os.path.isfile(path):
        raise UsageError(f"missing input file: {path}")
    return path


def _require_dir(path) -> str:
    if not os.path.isdir(path):
        raise UsageError(f"missing input directory: {path}")
    return path


def _load(fn, *args, **kwargs):
    # funnel malformed-input failures into the usage exit code
    try:
        return fn(*args, **kwargs)
    except (MeshError, ValueError, OSError) as exc:
        raise UsageError(str(exc)) from exc


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


# init


def cmd_init(args) -> int:
    _require_dir(args.views_dir)
    _require_file(args.camera_file)
    views = _load(load_views, args.camera_file, base_dir=args.views_dir)
    bounds = None
    if args.bounds is not None:
        b = args.bounds
        bounds = ((b[0], b[1], b[2]), (b[3], b[4], b[5]))
    start = time.perf_counter()
    grid = carve_visual_hull(views, args.grid, bounds)
    grid = distance_transform(grid)
    problem = build_coverage_problem(grid, args.alpha, args.beta)
    picked = solve_set_cover_greedy(problem)
    elapsed = time.perf_counter() - start
    write_init_json(
        args.output,
        problem.candidates[picked],
        problem.radii[picked],
        args.alpha,
        args.beta,
        args.grid,
    )
    print(f"candidates: {len(problem.candidates)}")
    print(f"selected: {len(picked)}")
    print(f"wall time: {elapsed:.2f} s")
    print(f"wrote {args.output}")
    return 0


# reconstruct


def cmd_reconstruct(args) -> int:
    _require_file(args.config)
    config, paths = _load(load_config, args.config)
    if args.iterations is not None:
        if args.iterations < 1:
            raise UsageError("--iterations must be at least 1")
        config = dataclasses.replace(config, iterations=args.iterations)
    for key in ("init", "views"):
        if key not in paths:
            raise UsageError(f"config {args.config} must set {key}=")
    out_dir = args.output or paths.get("output_dir")
    if not out_dir:
        raise UsageError("no output directory: set output_dir= in the config or pass -o")
    _require_file(paths["init"])
    _require_file(paths["views"])
    centers, radii, _ = _load(load_init_json, paths["init"])
    views = _load(load_views, paths["views"])
    os.makedirs(out_dir, exist_ok=True)

    manifest_path = os.path.join(out_dir, "manifest.json")
    manifest = {
        "command": "reconstruct",
        "argv": list(sys.argv),
        "config_path": os.path.abspath(args.config),
        "config": dataclasses.asdict(config),
        "init": os.path.abspath(paths["init"]),
        "views": os.path.abspath(paths["views"]),
        "output_dir": os.path.abspath(out_dir),
        "seed": config.seed,
        "num_spheres": int(len(centers)),
        "num_views": int(len(views)),
        "started_at": _now(),
        "versions": {
            "package": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    # manifest lands on disk before the long part so an interrupted run is
    # still reproducible
    _write_json(manifest_path, manifest)

    template = generate_unit_tetsphere(config.template_resolution)
    sphere_set = _load(instantiate_spheres, template, centers, radii)
    checkpoint_dir = paths.get("checkpoint_dir")

    start = time.perf_counter()
    sphere_set, report = reconstruct(sphere_set, views, config, checkpoint_dir)
    elapsed = time.perf_counter() - start

    save_obj(union_surfaces(sphere_set), os.path.join(out_dir, "union.obj"))
    for k, sphere in enumerate(sphere_set.spheres):
        save_tetmesh(sphere, os.path.join(out_dir, f"sphere_{k:03d}.tet"))
    write_iteration_csv(os.path.join(out_dir, "log.csv"), report["records"])
    plot_loss_curves(os.path.join(out_dir, "loss.png"), report["records"])
    manifest["finished_at"] = _now()
    manifest["wall_time_s"] = elapsed
    manifest["final"] = {
        k: report[k]
        for k in ("final_phi", "final_biharmonic", "final_penalty", "final_inverted")
    }
    _write_json(manifest_path, manifest)

    print(f"iterations: {report['iterations']}")
    print(f"final loss: {report['final_phi']:.6g}")
    print(f"final inverted tets: {report['final_inverted']}")
    print(f"wall time: {elapsed:.2f} s")
    print(f"wrote {out_dir}")
    return 0


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# metrics

_TABLE_COLUMNS = (
    ("Cham.", "chamfer"),
    ("Vol. IoU", "vol_iou"),
    ("ALR", "alr"),
    ("MR", "manifold"),
    ("CC Diff.", "cc_diff"),
    ("F-Score", "f_score"),
    ("Normal Consis.", "normal_consistency"),
    ("Edge Cham.", "edge_chamfer"),
    ("Edge F-Score", "edge_f_score"),
)


def _format_metric(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, bool):
        return "1.00" if value else "0.00"
    return f"{float(value):.4f}"


def cmd_metrics(args) -> int:
    _require_file(args.recon)
    _require_file(args.reference)
    recon = _load(load_obj, args.recon)
    reference = _load(load_obj, args.reference)

    if not args.no_icp:
        src = sample_surface_points(recon, args.samples, seed=args.seed)
        dst = sample_surface_points(reference, args.samples, seed=args.seed + 1)
        transform = icp_align(src, dst)
        recon = SurfaceMesh(
            vertices=apply_rigid_transform(recon.vertices, transform),
            faces=recon.faces,
        )

    pts_r = sample_surface_points(recon, args.samples, seed=args.seed)
    pts_g = sample_surface_points(reference, args.samples, seed=args.seed + 1)
    report = MetricReport(
        chamfer=chamfer(pts_r, pts_g),
        vol_iou=volume_iou(recon, reference, args.iou_resolution),
        alr=area_length_ratio(recon),
        manifold=manifoldness_check(recon),
        cc_count=connected_components(recon),
        cc_diff=cc_diff(recon, reference),
        f_score=f_score(pts_r, pts_g, args.tau),
        normal_consistency=normal_consistency(
            recon, reference, args.samples, seed=args.seed
        ),
        edge_chamfer=edge_chamfer(recon, reference, args.edge_angle, args.edge_points),
        edge_f_score=edge_f_score(
            recon, reference, args.tau, args.edge_angle, args.edge_points
        ),
    )

    data = report.as_dict()
    cells = [
        (header, _format_metric(getattr(report, field)))
        for header, field in _TABLE_COLUMNS
    ]
    widths = [max(len(h), len(v)) for h, v in cells]
    print("  ".join(h.rjust(w) for (h, _), w in zip(cells, widths)))
    print("  ".join(v.rjust(w) for (_, v), w in zip(cells, widths)))

    if args.output:
        os.makedirs(args.output, exist_ok=True)
        write_metrics_json(os.path.join(args.output, "metrics.json"), data)
        write_metrics_csv(os.path.join(args.output, "metrics.csv"), data)
        plot_metrics_bar(os.path.join(args.output, "metrics.png"), data)
        print(f"wrote {args.output}")
    return 0


# render


def cmd_render(args) -> int:
    _require_file(args.mesh)
    _require_file(args.camera_file)
    surface = _load(load_obj, args.mesh)
    cameras = _load(load_cameras, args.camera_file)
    os.makedirs(args.output, exist_ok=True)
    config = RenderConfig(sigma=args.sigma)
    for i, cam in enumerate(cameras):
        stem = os.path.join(args.output, f"view_{i:03d}")
        if args.mode == "mask":
            write_mask(stem + "_mask.png", render_silhouette_soft(surface, cam, config))
        elif args.mode == "depth":
            d = render_depth(surface, cam, config)
            write_depth_npy(stem + "_depth.npy", d)
            write_depth_png16(stem + "_depth.png", d, config.background_depth)
        else:
            n = render_normal(surface, cam, config)
            write_normal_npy(stem + "_normal.npy", n)
            write_normal_png(stem + "_normal.png", n)
    print(f"wrote {len(cameras)} {args.mode} images to {args.output}")
    return 0


# convert


def cmd_convert(args) -> int:
    _require_file(args.input)
    in_ext = os.path.splitext(args.input)[1].lower()
    out_ext = os.path.splitext(args.output)[1].lower()
    if in_ext == ".tet" and out_ext == ".obj":
        mesh = _load(load_tetmesh, args.input)
        save_obj(boundary_faces(mesh), args.output)
        print(f"wrote {args.output}")
        return 0
    if in_ext == ".obj":
        raise UsageError("converting a surface mesh to a tet mesh is not supported")
    raise UsageError(f"unsupported conversion: {in_ext or '?'} -> {out_ext or '?'}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tetrecon",
        description="Multi-view reconstruction with deformable tetrahedral spheres.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="select initial sphere centers from view masks")
    p.add_argument("views_dir", help="directory holding the mask images")
    p.add_argument("camera_file", help="camera JSON with per-view mask_path entries")
    p.add_argument("--grid", type=int, default=DEFAULT_GRID_RESOLUTION)
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--beta", type=float, default=DEFAULT_BETA)
    p.add_argument(
        "--bounds",
        type=float,
        nargs=6,
        metavar=("X0", "Y0", "Z0", "X1", "Y1", "Z1"),
        help="carving volume corners (default: unit cube [-1,1]^3)",
    )
    p.add_argument("-o", "--output", default="init.json")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("reconstruct", help="run the reconstruction loop")
    p.add_argument("config", help="key=value run configuration file")
    p.add_argument("--iterations", type=int, help="override the configured budget")
    p.add_argument("-o", "--output", help="override the configured output_dir")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("metrics", help="evaluate a reconstruction against a reference")
    p.add_argument("recon", help="reconstructed OBJ")
    p.add_argument("reference", help="reference OBJ")
    p.add_argument("--no-icp", action="store_true", help="skip rigid pre-alignment")
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--tau", type=float, default=0.01, help="F-score distance threshold")
    p.add_argument("--iou-resolution", type=int, default=64)
    p.add_argument("--edge-angle", type=float, default=30.0)
    p.add_argument("--edge-points", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", help="directory for metrics.json/csv/png")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("render", help="render previews of a surface mesh")
    p.add_argument("mesh", help="OBJ surface mesh")
    p.add_argument("camera_file", help="camera JSON")
    p.add_argument("--mode", choices=("mask", "depth", "normal"), default="mask")
    p.add_argument("--sigma", type=float, default=0.1, help="soft-mask sharpness")
    p.add_argument("-o", "--output", default="renders")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("convert", help="convert a tet sidecar to an OBJ surface")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_convert)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (
        MeshError,
        ValueError,
        RuntimeError,
        FloatingPointError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
