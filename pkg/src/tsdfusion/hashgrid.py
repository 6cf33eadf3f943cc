"""Flat spatial hash table over voxel blocks of heterogeneous resolution.

All resolution levels share one table. Each entry maps integer block
coordinates to a slot in the per-level block heap; level 0 is the finest.
Blocks have a constant metric edge, so a level-1 block holds 4x4x4 voxels
of twice the edge length of the 8x8x8 voxels in a level-0 block.

Collisions are resolved with fixed-size buckets per hash slot plus a
bounded per-slot chain allocated from a global overflow pool (the entry
offset field is the pool link index). Concurrency contract: concurrent
readers xor one writer; bulk mutation partitions by slot so no two
writers share a slot. This implementation is serial and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, NotFoundError

HASH_PRIMES = (73856093, 19349669, 83492791)
FINE_SIDE = 8

_P1, _P2, _P3 = (np.int64(p) for p in HASH_PRIMES)
_M64 = 1 << 64


def hash_key(coord, n_hash: int) -> int:
    """Slot index for integer block coordinates.

    Products and XOR wrap in 64-bit two's complement; the final reduction
    is a Euclidean mod, so the result is in [0, n_hash) even for negative
    coordinates.
    """
    if n_hash <= 0:
        raise ValueError("n_hash must be positive")
    x, y, z = (int(c) for c in coord)

    def wrap(v: int) -> int:
        v &= _M64 - 1
        return v - _M64 if v >= (1 << 63) else v

    h = wrap(wrap(x * HASH_PRIMES[0]) ^ wrap(y * HASH_PRIMES[1]) ^ wrap(z * HASH_PRIMES[2]))
    return h % n_hash


def hash_key_batch(coords: np.ndarray, n_hash: int) -> np.ndarray:
    """Vectorized hash_key for an (N, 3) int64 array."""
    coords = np.asarray(coords, dtype=np.int64)
    with np.errstate(over="ignore"):
        h = (coords[:, 0] * _P1) ^ (coords[:, 1] * _P2) ^ (coords[:, 2] * _P3)
    return h % np.int64(n_hash)  # numpy mod has the divisor's sign: non-negative


def voxel_side(level: int) -> int:
    return FINE_SIDE >> level


def voxel_count(level: int) -> int:
    return voxel_side(level) ** 3


@dataclass
class BlockPayload:
    """Full copy of one block's voxel data, detached from the heap."""

    coord: tuple[int, int, int]
    level: int
    tsdf: np.ndarray    # (nvox,) float64, clipped to [-tau, tau]
    weight: np.ndarray  # (nvox,) float64 observation counts
    s2: np.ndarray      # (nvox,) float64 accumulated squared deviations
    color: np.ndarray   # (nvox, 3) float32


class BlockHeap:
    """Fixed-capacity slab of voxel blocks at one resolution, with a free list."""

    def __init__(self, level: int, capacity: int):
        self.level = level
        self.side = voxel_side(level)
        self.nvox = self.side ** 3
        self.capacity = int(capacity)
        n = self.capacity * self.nvox
        self.tsdf = np.zeros(n, dtype=np.float64)
        self.weight = np.zeros(n, dtype=np.float64)
        self.s2 = np.zeros(n, dtype=np.float64)
        self.color = np.zeros((n, 3), dtype=np.float32)
        self.coords = np.zeros((self.capacity, 3), dtype=np.int64)
        self.live = np.zeros(self.capacity, dtype=bool)
        self._free = list(range(self.capacity - 1, -1, -1))
        self.occupied = 0

    def allocate(self, coord) -> int:
        if not self._free:
            raise CapacityError(f"level-{self.level} heap exhausted ({self.capacity} blocks)")
        handle = self._free.pop()
        lo = handle * self.nvox
        hi = lo + self.nvox
        self.tsdf[lo:hi] = 0.0
        self.weight[lo:hi] = 0.0
        self.s2[lo:hi] = 0.0
        self.color[lo:hi] = 0.0
        self.coords[handle] = coord
        self.live[handle] = True
        self.occupied += 1
        return handle

    def free(self, handle: int) -> None:
        self.live[handle] = False
        self._free.append(handle)
        self.occupied -= 1

    def payload(self, handle: int) -> BlockPayload:
        lo = handle * self.nvox
        hi = lo + self.nvox
        return BlockPayload(
            coord=tuple(int(c) for c in self.coords[handle]),
            level=self.level,
            tsdf=self.tsdf[lo:hi].copy(),
            weight=self.weight[lo:hi].copy(),
            s2=self.s2[lo:hi].copy(),
            color=self.color[lo:hi].copy(),
        )

    def write_payload(self, handle: int, payload: BlockPayload) -> None:
        lo = handle * self.nvox
        hi = lo + self.nvox
        self.tsdf[lo:hi] = payload.tsdf
        self.weight[lo:hi] = payload.weight
        self.s2[lo:hi] = payload.s2
        self.color[lo:hi] = payload.color

    def fill_fraction(self) -> float:
        return self.occupied / self.capacity


class HashTable:
    """Open-hashing index from block coordinates to (heap, level) handles."""

    def __init__(self, n_hash: int, bucket_capacity: int, overflow_capacity: int,
                 block_edge: float, heap_capacities: tuple[int, ...] = (16384, 8192)):
        if n_hash <= 0 or bucket_capacity <= 0 or overflow_capacity <= 0:
            raise ValueError("table sizes must be positive")
        self.n_hash = int(n_hash)
        self.bucket_capacity = int(bucket_capacity)
        self.overflow_capacity = int(overflow_capacity)
        self.block_edge = float(block_edge)
        self.heaps = [BlockHeap(level, cap) for level, cap in enumerate(heap_capacities)]
        self.num_levels = len(self.heaps)

        b = self.bucket_capacity
        self._used = np.zeros((self.n_hash, b), dtype=bool)
        self._coords = np.zeros((self.n_hash, b, 3), dtype=np.int64)
        self._handle = np.zeros((self.n_hash, b), dtype=np.int64)
        self._level = np.zeros((self.n_hash, b), dtype=np.int8)
        self._over_head = np.full(self.n_hash, -1, dtype=np.int64)

        pool_cap = max(64, sum(h.capacity for h in self.heaps))
        self._pool_coords = np.zeros((pool_cap, 3), dtype=np.int64)
        self._pool_handle = np.zeros(pool_cap, dtype=np.int64)
        self._pool_level = np.zeros(pool_cap, dtype=np.int8)
        self._pool_next = np.full(pool_cap, -1, dtype=np.int64)
        self._pool_free = list(range(pool_cap - 1, -1, -1))

    # -- sizes ---------------------------------------------------------

    def voxel_size(self, level: int) -> float:
        return self.block_edge / voxel_side(level)

    def live_count(self) -> int:
        return sum(h.occupied for h in self.heaps)

    def fill_fractions(self) -> list[float]:
        return [h.fill_fraction() for h in self.heaps]

    # -- core operations -------------------------------------------------

    def find(self, coord) -> tuple[int, int] | None:
        """Return (handle, level) for a live coordinate, probing only one slot."""
        coord = tuple(int(c) for c in coord)
        slot = hash_key(coord, self.n_hash)
        for i in range(self.bucket_capacity):
            if self._used[slot, i] and tuple(self._coords[slot, i]) == coord:
                return int(self._handle[slot, i]), int(self._level[slot, i])
        node = self._over_head[slot]
        while node >= 0:
            if tuple(self._pool_coords[node]) == coord:
                return int(self._pool_handle[node]), int(self._pool_level[node])
            node = self._pool_next[node]
        return None

    def probe_length(self, coord) -> int:
        """Number of live entries examined before a find resolves (for diagnostics)."""
        coord = tuple(int(c) for c in coord)
        slot = hash_key(coord, self.n_hash)
        probes = 0
        for i in range(self.bucket_capacity):
            if self._used[slot, i]:
                probes += 1
                if tuple(self._coords[slot, i]) == coord:
                    return probes
        node = self._over_head[slot]
        while node >= 0:
            probes += 1
            if tuple(self._pool_coords[node]) == coord:
                return probes
            node = self._pool_next[node]
        return probes

    def insert(self, coord, level: int) -> int:
        """Allocate a zero-initialized block and index it; idempotent.

        Re-inserting a live coordinate returns the existing handle without
        touching its level (integration re-touches blocks every frame).
        """
        coord = tuple(int(c) for c in coord)
        existing = self.find(coord)
        if existing is not None:
            return existing[0]
        handle = self.heaps[level].allocate(coord)
        slot = hash_key(coord, self.n_hash)
        for i in range(self.bucket_capacity):
            if not self._used[slot, i]:
                self._used[slot, i] = True
                self._coords[slot, i] = coord
                self._handle[slot, i] = handle
                self._level[slot, i] = level
                return handle
        # bucket full: prepend to the slot's overflow chain
        chain_len = 0
        node = self._over_head[slot]
        while node >= 0:
            chain_len += 1
            node = self._pool_next[node]
        if chain_len >= self.overflow_capacity:
            self.heaps[level].free(handle)
            raise CapacityError(
                f"slot {slot}: bucket ({self.bucket_capacity}) and overflow chain "
                f"({self.overflow_capacity}) are full")
        if not self._pool_free:
            self.heaps[level].free(handle)
            raise CapacityError("overflow pool exhausted")
        entry = self._pool_free.pop()
        self._pool_coords[entry] = coord
        self._pool_handle[entry] = handle
        self._pool_level[entry] = level
        self._pool_next[entry] = self._over_head[slot]
        self._over_head[slot] = entry
        return handle

    def remove(self, coord) -> BlockPayload:
        """Drop a live entry, free its heap slot, and return the voxel payload."""
        coord = tuple(int(c) for c in coord)
        slot = hash_key(coord, self.n_hash)
        for i in range(self.bucket_capacity):
            if self._used[slot, i] and tuple(self._coords[slot, i]) == coord:
                level = int(self._level[slot, i])
                handle = int(self._handle[slot, i])
                payload = self.heaps[level].payload(handle)
                self.heaps[level].free(handle)
                self._used[slot, i] = False
                self._promote_overflow(slot, i)
                return payload
        prev = -1
        node = self._over_head[slot]
        while node >= 0:
            if tuple(self._pool_coords[node]) == coord:
                level = int(self._pool_level[node])
                handle = int(self._pool_handle[node])
                payload = self.heaps[level].payload(handle)
                self.heaps[level].free(handle)
                if prev < 0:
                    self._over_head[slot] = self._pool_next[node]
                else:
                    self._pool_next[prev] = self._pool_next[node]
                self._pool_next[node] = -1
                self._pool_free.append(int(node))
                return payload
            prev = node
            node = self._pool_next[node]
        raise NotFoundError(f"block {coord} is not live")

    def _promote_overflow(self, slot: int, free_idx: int) -> None:
        """Move the overflow head into a freed bucket slot to keep chains short."""
        node = self._over_head[slot]
        if node < 0:
            return
        self._used[slot, free_idx] = True
        self._coords[slot, free_idx] = self._pool_coords[node]
        self._handle[slot, free_idx] = self._pool_handle[node]
        self._level[slot, free_idx] = self._pool_level[node]
        self._over_head[slot] = self._pool_next[node]
        self._pool_next[node] = -1
        self._pool_free.append(int(node))

    # -- batch operations -------------------------------------------------

    def find_batch(self, coords: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized find: (handles, levels, found) for an (N, 3) coord array.

        Bucket probing is fully vectorized; only slots whose bucket missed
        and that carry an overflow chain fall back to the scalar walk.
        """
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        n = len(coords)
        handles = np.full(n, -1, dtype=np.int64)
        levels = np.zeros(n, dtype=np.int64)
        found = np.zeros(n, dtype=bool)
        if n == 0:
            return handles, levels, found
        slots = hash_key_batch(coords, self.n_hash)
        match = self._used[slots] & np.all(self._coords[slots] == coords[:, None, :], axis=2)
        hit = match.any(axis=1)
        idx = np.argmax(match, axis=1)
        handles[hit] = self._handle[slots[hit], idx[hit]]
        levels[hit] = self._level[slots[hit], idx[hit]]
        found[hit] = True
        pending = np.nonzero(~hit & (self._over_head[slots] >= 0))[0]
        for j in pending:
            node = self._over_head[slots[j]]
            target = coords[j]
            while node >= 0:
                if (self._pool_coords[node] == target).all():
                    handles[j] = self._pool_handle[node]
                    levels[j] = self._pool_level[node]
                    found[j] = True
                    break
                node = self._pool_next[node]
        return handles, levels, found

    def insert_batch(self, coords: np.ndarray, level: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Find-or-insert each coordinate; returns (handles, levels, created)."""
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        handles, levels, found = self.find_batch(coords)
        created = ~found
        for j in np.nonzero(created)[0]:
            handles[j] = self.insert(coords[j], level)
            levels[j] = level
        return handles, levels, created

    # -- iteration ---------------------------------------------------------

    def live_blocks(self, level: int, sort: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """(coords, handles) of live blocks at a level, by default in canonical
        (x, y, z) order so downstream output is reproducible across runs."""
        heap = self.heaps[level]
        handles = np.nonzero(heap.live)[0].astype(np.int64)
        coords = heap.coords[handles]
        if sort and len(handles):
            order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))
            coords, handles = coords[order], handles[order]
        return coords, handles


def voxel_index(world_point, block_coord, level: int, block_edge: float) -> int:
    """Row-major offset (x slowest, z fastest) of the voxel containing a point."""
    p = np.asarray(world_point, dtype=np.float64)
    origin = np.asarray(block_coord, dtype=np.float64) * block_edge
    local = p - origin
    if np.any(local < 0) or np.any(local >= block_edge):
        raise ValueError(f"point {tuple(p)} lies outside block {tuple(block_coord)}")
    side = voxel_side(level)
    nu = block_edge / side
    ijk = np.minimum((local / nu).astype(np.int64), side - 1)
    return int((ijk[0] * side + ijk[1]) * side + ijk[2])
