"""Variance-driven resolution adaptation.

Per-voxel TSDF variance is aggregated to a block mean; blocks whose mean
falls under the threshold are re-allocated at the coarser level with
pooled statistics. Merging is one-way: nothing here ever refines a block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hashgrid import BlockPayload, HashTable, voxel_side

MERGE_MIN_ELIGIBLE_FRACTION = 0.05
MERGE_MIN_MEAN_WEIGHT = 3.0


@dataclass
class MergeStats:
    candidates: int = 0
    merged: int = 0


def block_mean_variance(weight: np.ndarray, s2: np.ndarray,
                        min_eligible_fraction: float = MERGE_MIN_ELIGIBLE_FRACTION) -> float:
    """Mean per-voxel variance over voxels with at least two observations.

    Returns +inf when fewer than the minimum fraction of voxels qualify:
    variance of under-observed blocks is not evidence for merging.
    """
    weight = np.asarray(weight, dtype=np.float64).ravel()
    s2 = np.asarray(s2, dtype=np.float64).ravel()
    eligible = weight >= 2.0
    if eligible.sum() < min_eligible_fraction * weight.size:
        return float("inf")
    return float(np.mean(s2[eligible] / weight[eligible]))


def _block_stats(table: HashTable, level: int, min_eligible_fraction: float
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized (coords, handles, mean_variance, mean_weight) over live blocks."""
    coords, handles = table.live_blocks(level, sort=True)
    if len(handles) == 0:
        empty = np.zeros(0)
        return coords, handles, empty, empty
    heap = table.heaps[level]
    w = heap.weight.reshape(heap.capacity, heap.nvox)[handles]
    s2 = heap.s2.reshape(heap.capacity, heap.nvox)[handles]
    eligible = w >= 2.0
    counts = eligible.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        var_sum = np.where(eligible, s2 / np.where(eligible, w, 1.0), 0.0).sum(axis=1)
        mean_var = np.where(counts > 0, var_sum / np.maximum(counts, 1), np.inf)
        mean_w = np.where(counts > 0, np.where(eligible, w, 0.0).sum(axis=1) / np.maximum(counts, 1), 0.0)
    mean_var = np.where(counts < min_eligible_fraction * heap.nvox, np.inf, mean_var)
    return coords, handles, mean_var, mean_w


def select_merge_candidates(table: HashTable, sigma_threshold: float,
                            min_eligible_fraction: float = MERGE_MIN_ELIGIBLE_FRACTION,
                            min_mean_weight: float = MERGE_MIN_MEAN_WEIGHT
                            ) -> list[tuple[int, int, int]]:
    """Finest-level blocks that are well observed and geometrically quiet."""
    if sigma_threshold <= 0:
        raise ValueError("sigma_threshold must be positive")
    coords, _, mean_var, mean_w = _block_stats(table, 0, min_eligible_fraction)
    if len(coords) == 0:
        return []
    keep = (mean_var < sigma_threshold) & (mean_w >= min_mean_weight)
    return [tuple(int(c) for c in coord) for coord in coords[keep]]


def downsample_block(fine: BlockPayload) -> BlockPayload:
    """Aggregate 2x2x2 voxel children into each coarse voxel.

    Distances and colors are weight-averaged over observed children; the
    squared-deviation accumulators combine through the pooled form
    s2 = sum(s2_i) + sum(W_i * (D_i - D)^2), the k-way equivalent of the
    pairwise parallel merge, so variance stays meaningful after merging.
    """
    if fine.level != 0:
        raise ValueError(f"downsample_block expects a level-0 block, got level {fine.level}")
    side = voxel_side(0)
    cs = side // 2

    def group(arr: np.ndarray) -> np.ndarray:
        extra = arr.shape[1:]
        a = arr.reshape(cs, 2, cs, 2, cs, 2, *extra)
        a = np.moveaxis(a, (1, 3, 5), (3, 4, 5))
        return a.reshape(cs ** 3, 8, *extra)

    w = group(fine.weight.astype(np.float64))
    d = group(fine.tsdf.astype(np.float64))
    s2 = group(fine.s2.astype(np.float64))
    c = group(fine.color.astype(np.float64))

    w_sum = w.sum(axis=1)
    observed = w_sum > 0
    denom = np.where(observed, w_sum, 1.0)
    d_mean = (w * d).sum(axis=1) / denom
    s2_pooled = s2.sum(axis=1) + (w * (d - d_mean[:, None]) ** 2).sum(axis=1)
    color = (w[..., None] * c).sum(axis=1) / denom[:, None]

    d_mean[~observed] = 0.0
    s2_pooled[~observed] = 0.0
    color[~observed] = 0.0
    return BlockPayload(
        coord=fine.coord,
        level=1,
        tsdf=d_mean,
        weight=w_sum,
        s2=s2_pooled,
        color=color.astype(np.float32),
    )


def apply_merges(table: HashTable, sigma_threshold: float,
                 min_eligible_fraction: float = MERGE_MIN_ELIGIBLE_FRACTION,
                 min_mean_weight: float = MERGE_MIN_MEAN_WEIGHT) -> MergeStats:
    """Re-allocate every merge candidate at the coarse level in place.

    The hash key is untouched; only the entry's level and heap handle
    change, so the block stays findable at the same coordinates.
    """
    candidates = select_merge_candidates(table, sigma_threshold,
                                         min_eligible_fraction, min_mean_weight)
    stats = MergeStats(candidates=len(candidates))
    for coord in candidates:
        payload = table.remove(coord)
        coarse = downsample_block(payload)
        handle = table.insert(coord, 1)
        table.heaps[1].write_payload(handle, coarse)
        stats.merged += 1
    return stats
