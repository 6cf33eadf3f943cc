"""End-to-end fusion pipeline: ingest, integrate, adapt, stream, mesh, report.

Frame flow per the system design: measurements allocate and update blocks,
merges run on a fixed cadence, and streaming kicks in only when the active
tier approaches capacity. In deterministic mode (the default and only mode
of this serial implementation) identical inputs reproduce identical maps
and meshes byte for byte.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .adapt import apply_merges
from .config import PipelineConfig
from .errors import CapacityError, DatasetError
from .formats import save_map, write_mesh
from .geometry import DepthFrame, PointCloudFrame
from .hashgrid import HashTable
from .integrate import IntegrationStats, integrate_depth, integrate_pointcloud
from .meshing import Mesh, extract_mesh
from .streaming import ArchiveStore, active_fill_fraction, stream_out

log = logging.getLogger("tsdfusion")


@dataclass
class RunReport:
    frames: int = 0
    failed_frames: int = 0
    stage_ms: dict = field(default_factory=dict)        # mean per frame
    total_ms_per_frame: float = 0.0
    fps: float = 0.0
    live_blocks: list = field(default_factory=list)     # per level at end
    peak_fill: float = 0.0
    merged_blocks: int = 0
    evicted_blocks: int = 0
    mesh_vertices: int = 0
    mesh_faces: int = 0
    mesh_ms: float = 0.0
    total_s: float = 0.0
    series: dict = field(default_factory=dict)          # per-frame traces

    def as_rows(self) -> list[tuple[str, str]]:
        rows = [
            ("frames", str(self.frames)),
            ("failed_frames", str(self.failed_frames)),
            ("total_s", f"{self.total_s:.3f}"),
            ("total_ms_per_frame", f"{self.total_ms_per_frame:.3f}"),
            ("fps", f"{self.fps:.3f}"),
            ("peak_fill", f"{self.peak_fill:.4f}"),
            ("merged_blocks", str(self.merged_blocks)),
            ("evicted_blocks", str(self.evicted_blocks)),
            ("mesh_vertices", str(self.mesh_vertices)),
            ("mesh_faces", str(self.mesh_faces)),
            ("mesh_ms", f"{self.mesh_ms:.1f}"),
        ]
        for i, n in enumerate(self.live_blocks):
            rows.append((f"live_blocks_level{i}", str(n)))
        for stage, ms in self.stage_ms.items():
            rows.append((f"{stage}_ms_per_frame", f"{ms:.3f}"))
        return rows


class FusionEngine:
    """Owns the hash table, archive, and per-frame policy decisions."""

    def __init__(self, config: PipelineConfig):
        self.config = config.validate()
        self.table = HashTable(
            n_hash=config.n_hash,
            bucket_capacity=config.bucket_capacity,
            overflow_capacity=config.overflow_capacity,
            block_edge=config.block_edge,
            heap_capacities=config.heap_capacities(),
        )
        self.archive = ArchiveStore()
        self.frame_index = 0
        self.merged_blocks = 0
        self.evicted_blocks = 0
        self.peak_fill = 0.0
        self.last_frame = None

    def integrate_frame(self, frame) -> IntegrationStats:
        cfg = self.config
        if isinstance(frame, DepthFrame):
            fuse = integrate_depth
        elif isinstance(frame, PointCloudFrame):
            fuse = integrate_pointcloud
        else:
            raise DatasetError(f"cannot integrate frame of type {type(frame).__name__}")

        def run():
            return fuse(self.table, frame, cfg.tau, archive=self.archive,
                        weight_cap=cfg.weight_cap)

        try:
            stats = run()
        except CapacityError:
            # heap exhausted mid-frame: evict what this frame does not need
            # and retry once (allocation precedes all updates, and insertion
            # is idempotent, so the retry re-applies nothing)
            self._force_stream(frame)
            stats = run()
        self.last_frame = frame
        self.frame_index += 1
        self.peak_fill = max(self.peak_fill, active_fill_fraction(self.table))
        return stats

    def _force_stream(self, frame) -> None:
        cfg = self.config
        mode = cfg.resolved_eviction_mode()
        kwargs = {"radius": cfg.eviction_radius}
        if mode == "frustum":
            if isinstance(frame, DepthFrame):
                kwargs = {"intrinsics": frame.intrinsics,
                          "image_size": (frame.width, frame.height)}
            else:
                mode = "radius"
        stats = stream_out(self.table, self.archive, frame.pose, mode,
                           fill_threshold=cfg.low_water, low_water=cfg.low_water,
                           **kwargs)
        self.evicted_blocks += stats.evicted
        log.info("heap pressure: evicted %d blocks mid-frame", stats.evicted)

    def maybe_merge(self) -> int:
        if self.frame_index % self.config.merge_cadence != 0:
            return 0
        stats = apply_merges(self.table, self.config.sigma_threshold,
                             self.config.merge_min_eligible_fraction,
                             self.config.merge_min_mean_weight)
        self.merged_blocks += stats.merged
        return stats.merged

    def maybe_stream(self) -> int:
        if self.last_frame is None:
            return 0
        if active_fill_fraction(self.table) < self.config.fill_threshold:
            return 0
        mode = self.config.resolved_eviction_mode()
        kwargs = {"radius": self.config.eviction_radius}
        if mode == "frustum":
            if not isinstance(self.last_frame, DepthFrame):
                mode = "radius"
            else:
                kwargs = {"intrinsics": self.last_frame.intrinsics,
                          "image_size": (self.last_frame.width, self.last_frame.height)}
        stats = stream_out(self.table, self.archive, self.last_frame.pose, mode,
                           fill_threshold=self.config.fill_threshold,
                           low_water=self.config.low_water, **kwargs)
        self.evicted_blocks += stats.evicted
        return stats.evicted

    def extract(self, iso: float = 0.0) -> Mesh:
        eps = self.config.collapse_epsilon_factor * self.config.nu_fine
        return extract_mesh(self.table, iso=iso, collapse_epsilon=eps)

    def save(self, path) -> None:
        save_map(self.table, path, archive=self.archive,
                 sensor_mode=self.config.sensor_mode, tau=self.config.tau)


def run_pipeline(config: PipelineConfig, frames, out_dir=None,
                 extract: bool = True, save: bool = True) -> tuple[RunReport, Mesh | None]:
    """Drive the full pipeline over an iterable of frames.

    Per-frame dataset errors are logged and the run continues; structural
    errors (capacity exhaustion with nothing evictable) abort.
    """
    from pathlib import Path

    engine = FusionEngine(config)
    report = RunReport()
    series = {"integrate_ms": [], "merge_ms": [], "stream_ms": [],
              "blocks_level0": [], "blocks_level1": [], "fill": []}
    totals = {"ingest": 0.0, "integrate": 0.0, "merge": 0.0, "stream": 0.0}
    t_run = time.perf_counter()
    frame_iter = iter(frames)
    while True:
        t0 = time.perf_counter()
        try:
            frame = next(frame_iter)
        except StopIteration:
            break
        except DatasetError as exc:
            log.error("frame %d ingest failed: %s", report.frames, exc)
            report.failed_frames += 1
            continue
        t1 = time.perf_counter()
        try:
            engine.integrate_frame(frame)
        except DatasetError as exc:
            log.error("frame %d integration failed: %s", report.frames, exc)
            report.failed_frames += 1
            continue
        t2 = time.perf_counter()
        engine.maybe_merge()
        t3 = time.perf_counter()
        engine.maybe_stream()
        t4 = time.perf_counter()

        report.frames += 1
        totals["ingest"] += t1 - t0
        totals["integrate"] += t2 - t1
        totals["merge"] += t3 - t2
        totals["stream"] += t4 - t3
        series["integrate_ms"].append((t2 - t1) * 1e3)
        series["merge_ms"].append((t3 - t2) * 1e3)
        series["stream_ms"].append((t4 - t3) * 1e3)
        series["blocks_level0"].append(engine.table.heaps[0].occupied)
        series["blocks_level1"].append(engine.table.heaps[1].occupied)
        series["fill"].append(active_fill_fraction(engine.table))

    mesh = None
    if extract:
        t5 = time.perf_counter()
        mesh = engine.extract()
        report.mesh_ms = (time.perf_counter() - t5) * 1e3
        report.mesh_vertices = mesh.num_vertices
        report.mesh_faces = mesh.num_triangles
    report.total_s = time.perf_counter() - t_run

    n = max(report.frames, 1)
    report.stage_ms = {k: v * 1e3 / n for k, v in totals.items()}
    per_frame = sum(totals.values()) * 1e3 / n
    report.total_ms_per_frame = per_frame
    report.fps = 1e3 / per_frame if per_frame > 0 else 0.0
    report.live_blocks = [h.occupied for h in engine.table.heaps]
    report.peak_fill = engine.peak_fill
    report.merged_blocks = engine.merged_blocks
    report.evicted_blocks = engine.evicted_blocks
    report.series = series

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if save:
            engine.save(out / "map.tsdfmap")
        if mesh is not None:
            write_mesh(mesh, out / "mesh.ply")
    return report, mesh
