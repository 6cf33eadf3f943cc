"""Multi-resolution vs single-resolution comparison on synthetic fixtures.

The single-resolution run disables merging by pushing the variance
threshold to (effectively) zero candidates; everything else is identical,
so differences in runtime, mesh size, and Chamfer error isolate the
adaptive-resolution policy. The time ratio multi/single is part of the
bench table.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .config import PipelineConfig
from .metrics import eval_reconstruction
from .pipeline import run_pipeline
from .report import save_bench_figures, write_bench_csv
from .synth import frames_reference, render_frames


def bench_config(multi_res: bool, nu_fine: float = 0.01) -> PipelineConfig:
    cfg = PipelineConfig.for_mode("depth")
    cfg = dataclasses.replace(cfg, nu_fine=nu_fine, block_edge=8 * nu_fine,
                              tau=3 * nu_fine)
    if not multi_res:
        # candidates need mean variance strictly below the threshold, so the
        # smallest positive float disables merging without a special case
        cfg = dataclasses.replace(cfg, sigma_threshold=5e-324)
    return cfg.validate()


def run_bench(scene: str, out_dir: str | Path | None = None, frames: int = 40,
              width: int = 96, height: int = 72) -> list[dict]:
    """Run both configurations on one scene; returns the bench table rows."""
    frame_list = render_frames(scene, frames, width, height)
    reference = frames_reference(frame_list)

    rows = []
    meshes = {}
    for name, multi in [("single_res", False), ("multi_res", True)]:
        cfg = bench_config(multi)
        report, mesh = run_pipeline(cfg, frame_list, extract=True, save=False)
        metrics = eval_reconstruction(mesh, reference, f_threshold=cfg.eval_f_threshold)
        meshes[name] = mesh
        rows.append({
            "config": name,
            "total_s": round(report.total_s, 3),
            "ms_per_frame": round(report.total_ms_per_frame, 2),
            "fps": round(report.fps, 2),
            "mesh_vertices": report.mesh_vertices,
            "mesh_faces": report.mesh_faces,
            "blocks_level0": report.live_blocks[0],
            "blocks_level1": report.live_blocks[1],
            "merged_blocks": report.merged_blocks,
            "peak_fill": round(report.peak_fill, 4),
            "chamfer_l1": round(metrics["chamfer_l1"], 6),
            "fscore": round(metrics["fscore"], 4),
        })

    single_t = rows[0]["total_s"]
    multi_t = rows[1]["total_s"]
    ratio = multi_t / single_t if single_t > 0 else float("inf")
    for row in rows:
        row["time_ratio_multi_over_single"] = round(ratio, 3)
    vr = rows[0]["mesh_vertices"] / max(rows[1]["mesh_vertices"], 1)
    for row in rows:
        row["vertex_ratio_single_over_multi"] = round(vr, 3)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_bench_csv(rows, out / "bench.csv")
        save_bench_figures(rows, out)
    return rows
