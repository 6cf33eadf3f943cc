"""Amanatides-Woo traversal of the block grid along ray segments."""

from __future__ import annotations

import numpy as np


def dda_blocks(origin, endpoint, block_edge: float) -> list[tuple[int, int, int]]:
    """Blocks whose cuboid the segment [origin, endpoint] intersects, in
    traversal order, each exactly once."""
    if block_edge <= 0:
        raise ValueError("block_edge must be positive")
    o = np.asarray(origin, dtype=np.float64)
    e = np.asarray(endpoint, dtype=np.float64)
    d = e - o
    if not np.any(d):
        raise ValueError("origin and endpoint coincide")
    cur = np.floor(o / block_edge).astype(np.int64)
    last = np.floor(e / block_edge).astype(np.int64)
    step = np.sign(d).astype(np.int64)
    t_max = np.full(3, np.inf)
    t_delta = np.full(3, np.inf)
    for a in range(3):
        if d[a] != 0.0:
            bound = (cur[a] + (1 if step[a] > 0 else 0)) * block_edge
            t_max[a] = (bound - o[a]) / d[a]
            t_delta[a] = block_edge / abs(d[a])
    out = [tuple(int(c) for c in cur)]
    while np.any(cur != last):
        a = int(np.argmin(t_max))
        if t_max[a] > 1.0:
            break
        cur[a] += step[a]
        t_max[a] += t_delta[a]
        out.append(tuple(int(c) for c in cur))
    return out


def dda_blocks_batch(origins: np.ndarray, endpoints: np.ndarray,
                     block_edge: float) -> tuple[np.ndarray, np.ndarray]:
    """Lockstep traversal of many segments at once.

    Returns (ray_ids, coords): one row per visited block, grouped by ray in
    traversal order. Zero-length segments yield just their containing block.
    """
    o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    e = np.asarray(endpoints, dtype=np.float64).reshape(-1, 3)
    n = len(o)
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 3), dtype=np.int64)
    d = e - o
    cur = np.floor(o / block_edge).astype(np.int64)
    last = np.floor(e / block_edge).astype(np.int64)
    step = np.sign(d).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = (cur + (step > 0)) * block_edge
        t_max = np.where(d != 0.0, (bound - o) / d, np.inf)
        t_delta = np.where(d != 0.0, block_edge / np.abs(d), np.inf)

    ray_chunks = [np.arange(n, dtype=np.int64)]
    coord_chunks = [cur.copy()]
    active = np.any(cur != last, axis=1)
    max_steps = int(np.abs(last - cur).sum(axis=1).max(initial=0)) + 3
    for _ in range(max_steps):
        ids = np.nonzero(active)[0]
        if len(ids) == 0:
            break
        tm = t_max[ids]
        axis = np.argmin(tm, axis=1)
        # a segment ending exactly on a boundary can exhaust t before
        # reaching floor(end); retire those rays instead of stepping
        overrun = tm[np.arange(len(ids)), axis] > 1.0
        active[ids[overrun]] = False
        ids, axis = ids[~overrun], axis[~overrun]
        if len(ids) == 0:
            continue
        cur[ids, axis] += step[ids, axis]
        t_max[ids, axis] += t_delta[ids, axis]
        ray_chunks.append(ids)
        coord_chunks.append(cur[ids])
        done = np.all(cur[ids] == last[ids], axis=1)
        active[ids[done]] = False
    ray_ids = np.concatenate(ray_chunks)
    coords = np.concatenate(coord_chunks)
    order = np.argsort(ray_ids, kind="stable")
    return ray_ids[order], coords[order]
