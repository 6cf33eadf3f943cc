"""Capacity-driven eviction of blocks to a host-side archive.

Streaming is deferred until the active tier approaches its capacity
threshold; spatially irrelevant blocks (outside the frustum or beyond a
radius) are then parked in the archive, farthest first, until occupancy
falls to the low-water mark. A coordinate is live or archived, never both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, NotFoundError
from .geometry import Intrinsics, SensorPose, project
from .hashgrid import BlockPayload, HashTable


@dataclass
class EvictionStats:
    evicted: int = 0
    bytes_out: int = 0
    fill_before: float = 0.0
    fill_after: float = 0.0


class ArchiveStore:
    """Host-side store of serialized blocks, keyed by coordinate."""

    def __init__(self):
        self._records: dict[tuple[int, int, int], bytes] = {}
        self.nbytes = 0

    def __contains__(self, coord) -> bool:
        return tuple(int(c) for c in coord) in self._records

    def __len__(self) -> int:
        return len(self._records)

    def coords(self) -> list[tuple[int, int, int]]:
        return sorted(self._records.keys())

    def store(self, payload: BlockPayload) -> int:
        from .formats import pack_block_record
        record = pack_block_record(payload, archived=True)
        self._records[payload.coord] = record
        self.nbytes += len(record)
        return len(record)

    def take(self, coord) -> BlockPayload:
        from .formats import unpack_block_record
        coord = tuple(int(c) for c in coord)
        record = self._records.pop(coord, None)
        if record is None:
            raise NotFoundError(f"block {coord} is not archived")
        self.nbytes -= len(record)
        payload, _, _ = unpack_block_record(record, 0)
        return payload

    def peek(self, coord) -> BlockPayload:
        from .formats import unpack_block_record
        coord = tuple(int(c) for c in coord)
        record = self._records.get(coord)
        if record is None:
            raise NotFoundError(f"block {coord} is not archived")
        payload, _, _ = unpack_block_record(record, 0)
        return payload


def active_fill_fraction(table: HashTable) -> float:
    """Worst-case occupancy across the per-level heaps, in [0, 1]."""
    return max(table.fill_fractions())


def _block_centers(table: HashTable, coords: np.ndarray) -> np.ndarray:
    return (coords.astype(np.float64) + 0.5) * table.block_edge


def select_evictable(table: HashTable, mode: str, pose: SensorPose,
                     intrinsics: Intrinsics | None = None,
                     image_size: tuple[int, int] | None = None,
                     radius: float = 50.0) -> list[tuple[int, int, int]]:
    """Blocks safe to evict, ordered by decreasing distance from the sensor.

    frustum mode drops a block only when all 8 cuboid corners project
    outside the image or behind the camera; radius mode when the block
    center is farther than the radius.
    """
    all_coords = []
    for level in range(table.num_levels):
        coords, _ = table.live_blocks(level, sort=True)
        if len(coords):
            all_coords.append(coords)
    if not all_coords:
        return []
    coords = np.concatenate(all_coords)
    centers = _block_centers(table, coords)
    dist = np.linalg.norm(centers - pose.translation, axis=1)

    if mode == "radius":
        evictable = dist > radius
    elif mode == "frustum":
        if intrinsics is None or image_size is None:
            raise ValueError("frustum mode needs intrinsics and image_size")
        width, height = image_size
        unit = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1],
                         [1, 1, 0], [1, 0, 1], [0, 1, 1], [1, 1, 1]], dtype=np.float64)
        corners = (coords[:, None, :].astype(np.float64) + unit[None]) * table.block_edge
        cam = pose.to_sensor(corners.reshape(-1, 3)).reshape(len(coords), 8, 3)
        u, v, z = project(cam, intrinsics)
        outside = (z <= 0) | (u < -0.5) | (u > width - 0.5) | (v < -0.5) | (v > height - 0.5)
        evictable = outside.all(axis=1)
    else:
        raise ValueError(f"unknown eviction mode {mode!r}")

    idx = np.nonzero(evictable)[0]
    idx = idx[np.argsort(-dist[idx], kind="stable")]
    return [tuple(int(c) for c in coords[i]) for i in idx]


def stream_out(table: HashTable, archive: ArchiveStore, pose: SensorPose, mode: str,
               fill_threshold: float = 0.85, low_water: float = 0.70,
               intrinsics: Intrinsics | None = None,
               image_size: tuple[int, int] | None = None,
               radius: float = 50.0) -> EvictionStats:
    """Evict irrelevant blocks once occupancy reaches the threshold."""
    stats = EvictionStats(fill_before=active_fill_fraction(table))
    stats.fill_after = stats.fill_before
    if stats.fill_before < fill_threshold:
        return stats
    candidates = select_evictable(table, mode, pose, intrinsics, image_size, radius)
    for coord in candidates:
        if active_fill_fraction(table) <= low_water:
            break
        payload = table.remove(coord)
        stats.bytes_out += archive.store(payload)
        stats.evicted += 1
    stats.fill_after = active_fill_fraction(table)
    if stats.fill_after >= fill_threshold:
        raise CapacityError(
            f"occupancy {stats.fill_after:.2f} still at/above threshold {fill_threshold:.2f} "
            f"after evicting {stats.evicted} of {len(candidates)} candidates; "
            "no spatially irrelevant blocks left to stream out")
    return stats


def stream_in(table: HashTable, archive: ArchiveStore, coord) -> tuple[int, int]:
    """Restore an archived block into the active tier with its payload intact."""
    coord = tuple(int(c) for c in coord)
    if table.find(coord) is not None:
        raise ValueError(f"block {coord} is already live")
    payload = archive.take(coord)
    handle = table.insert(coord, payload.level)
    table.heaps[payload.level].write_payload(handle, payload)
    return handle, payload.level
