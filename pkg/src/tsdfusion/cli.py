"""Command-line interface.

Subcommands: synth (generate fixtures), integrate (dataset -> map + report),
mesh (map -> PLY), eval (mesh + reference -> metrics JSON), quadtree
(image -> leaves CSV / seeds PLY), bench (multi- vs single-resolution
comparison). Set TSDFUSION_LOG_LEVEL to control logging. Exit codes:
0 success, otherwise the failing error category (2 config, 3 dataset,
4 capacity, 5 not found, 6 format, 1 other).
"""

from __future__ import annotations

import dataclasses
import functools
import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import datasets, synth
from .config import PipelineConfig, load_config
from .errors import DatasetError, FusionError
from .formats import read_mesh, read_points, write_mesh, write_seeds
from .geometry import DepthFrame, SensorPose, quaternion_to_rotation
from .metrics import eval_reconstruction
from .pipeline import run_pipeline
from .quadtree import build_quadtree, seed_splats

log = logging.getLogger("tsdfusion")


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except FusionError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)
    return wrapper


def _config_options(fn):
    """One CLI flag per config key, unset flags leave the config untouched."""
    for f in reversed(dataclasses.fields(PipelineConfig)):
        default = getattr(PipelineConfig(), f.name)
        opt_type = click.BOOL if isinstance(default, bool) else type(default)
        fn = click.option(f"--{f.name.replace('_', '-')}", f.name, type=opt_type,
                          default=None, help=f"override config key {f.name}")(fn)
    return fn


def _build_config(config_path, kwargs) -> PipelineConfig:
    overrides = {k: v for k, v in kwargs.items()
                 if k in {f.name for f in dataclasses.fields(PipelineConfig)}
                 and v is not None}
    if config_path:
        return load_config(config_path, overrides)
    mode = overrides.pop("sensor_mode", "depth")
    cfg = dataclasses.replace(PipelineConfig.for_mode(mode), **overrides)
    return cfg.validate()


@click.group()
def main():
    level = os.environ.get("TSDFUSION_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


@main.command("synth")
@click.option("--scene", type=click.Choice(["plane", "sphere", "room"]), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--frames", type=int, default=30, show_default=True)
@click.option("--width", type=int, default=96, show_default=True)
@click.option("--height", type=int, default=72, show_default=True)
@click.option("--sensor", type=click.Choice(["depth", "pointcloud"]), default="depth",
              show_default=True)
@_handle_errors
def synth_cmd(scene, out_dir, frames, width, height, sensor):
    """Generate a synthetic fixture dataset."""
    path = synth.generate_dataset(scene, out_dir, frames=frames, width=width,
                                  height=height, sensor_mode=sensor)
    click.echo(f"wrote {scene} dataset ({frames} frames) to {path}")


@main.command("integrate")
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", type=click.Path(), default="run_out", show_default=True)
@click.option("--mesh/--no-mesh", "do_mesh", default=True, show_default=True)
@_config_options
@_handle_errors
def integrate(dataset_dir, config_path, out_dir, do_mesh, **kwargs):
    """Fuse a dataset into a map; writes map, mesh, report CSVs, figures."""
    from .report import save_report_figures, write_frames_csv, write_report_csv

    cfg = _build_config(config_path, kwargs)
    dataset_dir = Path(dataset_dir)
    if cfg.sensor_mode == "depth":
        frames = datasets.read_depth_sequence(
            dataset_dir, dataset_dir / "trajectory.txt", dataset_dir / "intrinsics.txt",
            depth_scale=cfg.depth_scale)
    else:
        frames = datasets.read_pointcloud_sequence(dataset_dir, dataset_dir / "trajectory.txt")
    report, _ = run_pipeline(cfg, frames, out_dir=out_dir, extract=do_mesh)
    out = Path(out_dir)
    write_report_csv(report, out / "report.csv")
    write_frames_csv(report, out / "frames.csv")
    save_report_figures(report, out)
    for key, value in report.as_rows():
        click.echo(f"{key:>24}: {value}")
    click.echo(f"outputs in {out}")


@main.command("mesh")
@click.option("--map", "map_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--iso", type=float, default=0.0, show_default=True)
@click.option("--collapse-epsilon", type=float, default=None)
@_handle_errors
def mesh_cmd(map_path, out_path, iso, collapse_epsilon):
    """Extract a triangle mesh from a saved map."""
    from .formats import load_map
    from .meshing import extract_mesh

    table, _, info = load_map(map_path)
    mesh = extract_mesh(table, iso=iso, collapse_epsilon=collapse_epsilon)
    write_mesh(mesh, out_path)
    click.echo(f"{mesh.num_vertices} vertices, {mesh.num_triangles} faces -> {out_path}")


@main.command("eval")
@click.option("--mesh", "mesh_path", type=click.Path(exists=True), required=True)
@click.option("--reference", "ref_path", type=click.Path(exists=True), required=True)
@click.option("--threshold", type=float, default=0.10, show_default=True,
              help="F-score distance threshold in meters")
@click.option("--out", "out_path", type=click.Path(), default=None)
@_handle_errors
def eval_cmd(mesh_path, ref_path, threshold, out_path):
    """Reconstruction metrics of a mesh against a reference point cloud."""
    mesh = read_mesh(mesh_path)
    reference = read_points(ref_path)
    result = eval_reconstruction(mesh, reference, f_threshold=threshold)
    text = json.dumps(result, indent=2)
    if out_path:
        Path(out_path).write_text(text + "\n")
    click.echo(text)


@main.command("quadtree")
@click.option("--image", "image_path", type=click.Path(exists=True), required=True)
@click.option("--depth", "depth_path", type=click.Path(exists=True), default=None)
@click.option("--intrinsics", "intrinsics_path", type=click.Path(exists=True), default=None)
@click.option("--depth-scale", type=float, default=5000.0, show_default=True)
@click.option("--pose", "pose_str", type=str, default=None,
              help="'tx ty tz qx qy qz qw' (default identity)")
@click.option("--threshold", type=float, default=0.1, show_default=True)
@click.option("--min-pixel", type=int, default=1, show_default=True)
@click.option("--leaves", "leaves_path", type=click.Path(), required=True)
@click.option("--seeds", "seeds_path", type=click.Path(), default=None)
@_handle_errors
def quadtree_cmd(image_path, depth_path, intrinsics_path, depth_scale, pose_str,
                 threshold, min_pixel, leaves_path, seeds_path):
    """Subdivide an image by contrast; optionally seed splats from depth."""
    from PIL import Image

    image = np.asarray(Image.open(image_path).convert("RGB"), dtype=np.float64) / 255.0
    leaves = build_quadtree(image, contrast_threshold=threshold, min_pixel=min_pixel)
    with open(leaves_path, "w") as f:
        f.write("x0,y0,w,h,contrast\n")
        for leaf in leaves:
            f.write(f"{leaf.x0},{leaf.y0},{leaf.w},{leaf.h},{leaf.contrast:.9g}\n")
    click.echo(f"{len(leaves)} leaves -> {leaves_path}")
    if seeds_path:
        if not depth_path or not intrinsics_path:
            raise DatasetError("--seeds needs --depth and --intrinsics")
        raw = np.asarray(Image.open(depth_path), dtype=np.float64)
        pose = SensorPose.identity()
        if pose_str:
            vals = [float(x) for x in pose_str.split()]
            if len(vals) != 7:
                raise DatasetError("--pose expects 7 numbers")
            pose = SensorPose(quaternion_to_rotation(*vals[3:]), np.array(vals[:3]))
        frame = DepthFrame(depth=raw / depth_scale,
                           intrinsics=datasets.read_intrinsics(intrinsics_path),
                           pose=pose, color=image)
        seeds = seed_splats(leaves, frame)
        write_seeds(seeds, seeds_path)
        click.echo(f"{len(seeds)} seeds -> {seeds_path}")


@main.command("bench")
@click.option("--out", "out_dir", type=click.Path(), default="bench_out", show_default=True)
@click.option("--scene", type=click.Choice(["room", "sphere", "plane"]), default="room",
              show_default=True)
@click.option("--frames", type=int, default=40, show_default=True)
@click.option("--width", type=int, default=96, show_default=True)
@click.option("--height", type=int, default=72, show_default=True)
@_handle_errors
def bench_cmd(out_dir, scene, frames, width, height):
    """Multi- vs single-resolution comparison on a synthetic fixture."""
    from .bench import run_bench

    rows = run_bench(scene, out_dir, frames=frames, width=width, height=height)
    keys = list(rows[0].keys())
    widths = {k: max(len(k), max(len(str(r[k])) for r in rows)) for k in keys}
    click.echo("  ".join(k.ljust(widths[k]) for k in keys))
    for r in rows:
        click.echo("  ".join(str(r[k]).ljust(widths[k]) for k in keys))


if __name__ == "__main__":
    main()
