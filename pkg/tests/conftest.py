import numpy as np
import pytest

from tsdfusion.hashgrid import HashTable


@pytest.fixture
def small_table() -> HashTable:
    """A table sized for unit tests: 97 slots, room for 512 blocks."""
    return HashTable(n_hash=97, bucket_capacity=10, overflow_capacity=7,
                     block_edge=0.08, heap_capacities=(512, 256))


def make_table(n_hash=97, bucket=10, overflow=7, edge=0.08, caps=(512, 256)) -> HashTable:
    return HashTable(n_hash=n_hash, bucket_capacity=bucket, overflow_capacity=overflow,
                     block_edge=edge, heap_capacities=caps)


def random_coords(rng: np.random.Generator, n: int, lo=-50, hi=50) -> np.ndarray:
    """Distinct random block coordinates."""
    seen = set()
    out = []
    while len(out) < n:
        c = tuple(int(v) for v in rng.integers(lo, hi, size=3))
        if c not in seen:
            seen.add(c)
            out.append(c)
    return np.array(out, dtype=np.int64)
