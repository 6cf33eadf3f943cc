"""Fusion of point-cloud and depth measurements into the voxel grid.

Signed distances are truncated to [-tau, tau], fused with a unit-weight
running average, and the per-voxel variance is accumulated in a single
pass (Welford recurrence) so adaptivity can read it later without any
observation history.

Batched updates group observations per voxel and replay them in rounds,
one observation per voxel per round, in a canonical (voxel, arrival)
order; this matches the scalar recurrence exactly and keeps results
reproducible. Concurrency contract: work items may be processed in
parallel as long as per-block voxel updates stay serialized; this
implementation is serial.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dda import dda_blocks, dda_blocks_batch
from .geometry import DepthFrame, PointCloudFrame, project, ray_norms
from .hashgrid import HashTable, voxel_side

_UPDATE_CHUNK_BLOCKS = 1024


@dataclass
class Voxel:
    """Scalar view of one cell: fused distance, count, color, s2 accumulator."""

    tsdf: float = 0.0
    weight: float = 0.0
    color: tuple[float, float, float] = (0.0, 0.0, 0.0)
    s2: float = 0.0

    def variance(self) -> float:
        return self.s2 / self.weight if self.weight >= 1 else 0.0


@dataclass
class IntegrationStats:
    measurements: int = 0        # valid points / pixels processed
    skipped_invalid: int = 0
    blocks_allocated: int = 0    # fresh inserts this call
    blocks_touched: int = 0      # distinct blocks traversed this call
    voxels_updated: int = 0      # distinct voxels that received an update
    observations: int = 0        # total observations applied
    warnings: list[str] = field(default_factory=list)


def sdf_ray(p, x, o, tau: float) -> float:
    """Along-ray signed distance of voxel center x to surface point p, clipped.

    Positive in front of the surface (sensor side), negative behind.
    """
    p = np.asarray(p, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    o = np.asarray(o, dtype=np.float64)
    ray = p - o
    n = np.linalg.norm(ray)
    if n == 0.0:
        raise ValueError("surface point coincides with the sensor origin")
    return float(np.clip(np.dot(p - x, ray / n), -tau, tau))


def sdf_projective(d: float, x, tau: float) -> float:
    """Projective signed distance: measured ray distance minus voxel range."""
    x = np.asarray(x, dtype=np.float64)
    return float(np.clip(d - np.linalg.norm(x), -tau, tau))


def update_voxel(v: Voxel, d_k: float, rgb=None, weight_cap: float = 0.0) -> Voxel:
    """One fusion step: running average of distance (and color), Welford s2.

    The s2 term uses the mean before and after this observation, then the
    count increments; variance is s2 / weight (population form).
    """
    w_old = v.weight
    d_new = (w_old * v.tsdf + d_k) / (w_old + 1.0)
    s2 = v.s2 + (d_k - v.tsdf) * (d_k - d_new)
    w_new = w_old + 1.0
    if weight_cap > 0.0:
        w_new = min(w_new, weight_cap)
    color = v.color
    if rgb is not None:
        color = tuple((w_old * np.asarray(v.color) + np.asarray(rgb)) / (w_old + 1.0))
    return Voxel(tsdf=d_new, weight=w_new, color=color, s2=s2)


def _apply_batch(heap, flat_idx: np.ndarray, d: np.ndarray,
                 colors: np.ndarray | None, weight_cap: float) -> int:
    """Apply grouped observations to heap voxels; returns distinct voxel count."""
    if len(flat_idx) == 0:
        return 0
    seq = np.arange(len(flat_idx))
    order = np.lexsort((seq, flat_idx))
    flat_idx = flat_idx[order]
    d = d[order]
    if colors is not None:
        colors = colors[order]
    uniq, starts, counts = np.unique(flat_idx, return_index=True, return_counts=True)
    for r in range(int(counts.max())):
        live = counts > r
        sel = starts[live] + r
        idx = uniq[live]
        w_old = heap.weight[idx]
        d_old = heap.tsdf[idx]
        d_new = (w_old * d_old + d[sel]) / (w_old + 1.0)
        heap.s2[idx] += (d[sel] - d_old) * (d[sel] - d_new)
        heap.tsdf[idx] = d_new
        w_new = w_old + 1.0
        if weight_cap > 0.0:
            np.minimum(w_new, weight_cap, out=w_new)
        heap.weight[idx] = w_new
        if colors is not None:
            heap.color[idx] = ((w_old[:, None] * heap.color[idx]) + colors[sel]) / (w_old[:, None] + 1.0)
    return len(uniq)


def _ensure_blocks(table: HashTable, coords: np.ndarray, archive=None
                   ) -> tuple[np.ndarray, np.ndarray, int]:
    """Find-or-create the given block coords at the finest level.

    Existing blocks keep their level (merging is one-way). Coordinates
    parked in the archive are streamed back in with their payload intact.
    """
    handles, levels, found = table.find_batch(coords)
    created = 0
    for j in np.nonzero(~found)[0]:
        coord = tuple(int(c) for c in coords[j])
        if archive is not None and coord in archive:
            from .streaming import stream_in
            handles[j], levels[j] = stream_in(table, archive, coord)
        else:
            handles[j] = table.insert(coord, 0)
            levels[j] = 0
            created += 1
    return handles, levels, created


def allocate_for_measurement(table: HashTable, origin, p, tau: float,
                             archive=None) -> list[int]:
    """Allocate every block the ray origin -> p (+tau beyond) intersects.

    New blocks start at the finest level; blocks already merged coarse stay
    coarse. Returns handles of all touched blocks in traversal order.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    o = np.asarray(origin, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    ray = p - o
    n = np.linalg.norm(ray)
    if n == 0.0:
        raise ValueError("measurement coincides with the sensor origin")
    endpoint = p + tau * ray / n
    coords = np.asarray(dda_blocks(o, endpoint, table.block_edge), dtype=np.int64)
    handles, _, _ = _ensure_blocks(table, coords, archive)
    return [int(h) for h in handles]


def _voxel_centers(table: HashTable, coords: np.ndarray, level: int) -> np.ndarray:
    """(B, nvox, 3) world centers for blocks at one level, row-major voxel order."""
    side = voxel_side(level)
    nu = table.voxel_size(level)
    r = np.arange(side, dtype=np.float64)
    gx, gy, gz = np.meshgrid(r, r, r, indexing="ij")
    local = (np.stack([gx, gy, gz], axis=-1).reshape(-1, 3) + 0.5) * nu
    origins = coords.astype(np.float64) * table.block_edge
    return origins[:, None, :] + local[None, :, :]


def integrate_pointcloud(table: HashTable, frame: PointCloudFrame, tau: float,
                         archive=None, weight_cap: float = 0.0) -> IntegrationStats:
    """Ray-based fusion of a point cloud: DDA allocation from the sensor
    origin to each point, then band-limited updates along each ray."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    stats = IntegrationStats()
    pts = frame.points
    if len(pts) == 0:
        return stats
    finite = np.all(np.isfinite(pts), axis=1)
    nonzero = np.linalg.norm(np.where(finite[:, None], pts, 0.0), axis=1) > 0
    valid = finite & nonzero
    stats.skipped_invalid = int((~valid).sum())
    pts = pts[valid]
    stats.measurements = len(pts)
    if len(pts) == 0:
        return stats

    world = frame.pose.to_world(pts)
    o = frame.pose.translation
    ray = world - o
    length = np.linalg.norm(ray, axis=1)
    nhat = ray / length[:, None]
    endpoints = world + tau * nhat
    origins = np.broadcast_to(o, world.shape)

    ray_ids, visited = dda_blocks_batch(origins, endpoints, table.block_edge)
    uniq_coords = np.unique(visited, axis=0)
    _, _, created = _ensure_blocks(table, uniq_coords, archive)
    stats.blocks_allocated = created
    stats.blocks_touched = len(uniq_coords)

    # Keep only (ray, block) pairs whose block can intersect the truncation
    # band around this ray's surface point before expanding to voxels.
    centers = (visited.astype(np.float64) + 0.5) * table.block_edge
    t_center = np.einsum("ij,ij->i", centers - o, nhat[ray_ids])
    r_block = table.block_edge * np.sqrt(3.0) / 2.0
    near = np.abs(length[ray_ids] - t_center) <= tau + r_block
    ray_ids = ray_ids[near]
    visited = visited[near]
    if len(visited) == 0:
        return stats

    handles, levels, found = table.find_batch(visited)
    colors = frame.colors[valid] if frame.colors is not None else None
    for level in range(table.num_levels):
        sel = found & (levels == level)
        if not sel.any():
            continue
        heap = table.heaps[level]
        pair_rays = ray_ids[sel]
        pair_handles = handles[sel]
        pair_coords = visited[sel]
        flats, ds, cs = [], [], []
        for lo in range(0, len(pair_rays), _UPDATE_CHUNK_BLOCKS):
            hi = lo + _UPDATE_CHUNK_BLOCKS
            rr = pair_rays[lo:hi]
            hh = pair_handles[lo:hi]
            centers = _voxel_centers(table, pair_coords[lo:hi], level)  # (P, nvox, 3)
            t = np.einsum("pvj,pj->pv", centers - o, nhat[rr])
            sdf = length[rr][:, None] - t
            band = (np.abs(sdf) <= tau) & (t >= 0.0) & (t <= (length[rr] + tau)[:, None])
            p_idx, v_idx = np.nonzero(band)
            if len(p_idx) == 0:
                continue
            flats.append(hh[p_idx] * heap.nvox + v_idx)
            ds.append(np.clip(sdf[p_idx, v_idx], -tau, tau))
            if colors is not None:
                cs.append(colors[rr[p_idx]])
        if not flats:
            continue
        flat = np.concatenate(flats)
        d = np.concatenate(ds)
        c = np.concatenate(cs) if cs else None
        stats.voxels_updated += _apply_batch(heap, flat, d, c, weight_cap)
        stats.observations += len(d)
    return stats


def integrate_depth(table: HashTable, frame: DepthFrame, tau: float,
                    archive=None, weight_cap: float = 0.0) -> IntegrationStats:
    """Projective fusion of a depth image.

    Allocation back-projects every valid pixel and runs DDA along its ray;
    the update pass projects each voxel of the touched blocks into the
    image and fuses where the measured ray distance is within the band.
    Stored depth is z-depth; it is scaled per pixel to distance along the
    ray before the signed-distance comparison.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    stats = IntegrationStats()
    valid = frame.valid_mask()
    stats.skipped_invalid = int(valid.size - valid.sum())
    if not valid.any():
        stats.warnings.append("frame has no valid depth pixels")
        return stats
    vs, us = np.nonzero(valid)
    zs = frame.depth[vs, us]
    stats.measurements = len(zs)
    intr = frame.intrinsics

    x = (us - intr.cx) / intr.fx * zs
    y = (vs - intr.cy) / intr.fy * zs
    pts_cam = np.stack([x, y, zs], axis=1)
    world = frame.pose.to_world(pts_cam)
    o = frame.pose.translation
    ray = world - o
    length = np.linalg.norm(ray, axis=1)
    nhat = ray / length[:, None]
    endpoints = world + tau * nhat

    _, visited = dda_blocks_batch(np.broadcast_to(o, world.shape), endpoints, table.block_edge)
    uniq_coords = np.unique(visited, axis=0)
    handles, levels, created = _ensure_blocks(table, uniq_coords, archive)
    stats.blocks_allocated = created
    stats.blocks_touched = len(uniq_coords)

    rot_t = frame.pose.rotation.T
    d_min = float(zs.min())
    d_max = float(zs.max()) * np.sqrt(
        1.0 + ((max(frame.width - 1 - intr.cx, intr.cx)) / intr.fx) ** 2
        + ((max(frame.height - 1 - intr.cy, intr.cy)) / intr.fy) ** 2)
    r_block = table.block_edge * np.sqrt(3.0) / 2.0

    for level in range(table.num_levels):
        sel = levels == level
        if not sel.any():
            continue
        heap = table.heaps[level]
        lvl_coords = uniq_coords[sel]
        lvl_handles = handles[sel]
        # blocks closer than any measurement or beyond the farthest cannot
        # hold voxels inside the band; skip them before expanding
        centers_cam = (lvl_coords.astype(np.float64) + 0.5) * table.block_edge - o
        dist = np.linalg.norm(centers_cam, axis=1)
        near = (dist >= d_min - tau - r_block) & (dist <= d_max + tau + r_block)
        lvl_coords = lvl_coords[near]
        lvl_handles = lvl_handles[near]
        for lo in range(0, len(lvl_handles), _UPDATE_CHUNK_BLOCKS):
            hi = lo + _UPDATE_CHUNK_BLOCKS
            centers = _voxel_centers(table, lvl_coords[lo:hi], level)
            b, nvox, _ = centers.shape
            cam = (centers.reshape(-1, 3) - o) @ rot_t.T
            u, v, z = project(cam, intr)
            ok = z > 0
            ui = np.round(u).astype(np.int64)
            vi = np.round(v).astype(np.int64)
            ok &= (ui >= 0) & (ui < frame.width) & (vi >= 0) & (vi < frame.height)
            ui_c = np.clip(ui, 0, frame.width - 1)
            vi_c = np.clip(vi, 0, frame.height - 1)
            meas = frame.depth[vi_c, ui_c]
            ok &= np.isfinite(meas) & (meas > 0)
            d_ray = meas * ray_norms(ui_c, vi_c, intr)
            sdf = d_ray - np.linalg.norm(cam, axis=1)
            ok &= np.abs(sdf) <= tau
            rows = np.nonzero(ok)[0]
            if len(rows) == 0:
                continue
            flat = np.repeat(lvl_handles[lo:hi], nvox)[rows] * heap.nvox + (rows % nvox)
            d = np.clip(sdf[rows], -tau, tau)
            c = None
            if frame.color is not None:
                c = frame.color[vi_c[rows], ui_c[rows]]
            stats.voxels_updated += _apply_batch(heap, flat, d, c, weight_cap)
            stats.observations += len(d)
    return stats
