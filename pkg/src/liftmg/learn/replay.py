"""Fixed-capacity FIFO replay buffer with uniform sampling."""

from __future__ import annotations

import numpy as np

DEFAULT_CAPACITY = 10_000
# map values are 0, 1 or multiples of 1/11, so this scale stores them exactly in uint8
MAP_SCALE = 220.0


def encode_map(m: np.ndarray) -> np.ndarray:
    return np.rint(np.asarray(m) * MAP_SCALE).astype(np.uint8)


def decode_map(q: np.ndarray) -> np.ndarray:
    return q.astype(np.float32) / np.float32(MAP_SCALE)


class ReplayBuffer:
    """Ring buffer over named fields; storage is allocated on the first insert.

    Each item gets a monotonically increasing insertion id, kept in the
    ``"id"`` field, so eviction order can be inspected.
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.store: dict[str, np.ndarray] = {}
        self.size = 0
        self.next_id = 0

    def __len__(self) -> int:
        return self.size

    def add(self, **fields):
        if not self.store:
            for k, v in fields.items():
                v = np.asarray(v)
                self.store[k] = np.zeros((self.capacity,) + v.shape, dtype=v.dtype)
            self.store["id"] = np.zeros(self.capacity, dtype=np.int64)
        elif set(fields) | {"id"} != set(self.store):
            raise KeyError(f"fields {sorted(fields)} do not match the buffer layout")
        slot = self.next_id % self.capacity
        for k, v in fields.items():
            self.store[k][slot] = v
        self.store["id"][slot] = self.next_id
        self.next_id += 1
        self.size = min(self.size + 1, self.capacity)

    def ids(self) -> np.ndarray:
        return np.sort(self.store["id"][:self.size]) if self.store else np.zeros(0, np.int64)

    def sample(self, batch_size: int, rng) -> dict:
        if batch_size > self.size:
            raise ValueError(f"buffer holds {self.size} items, batch needs {batch_size}")
        idx = rng.integers(self.size, size=batch_size)
        return {k: v[idx] for k, v in self.store.items()}

    def state(self) -> dict:
        return {"capacity": self.capacity, "size": self.size, "next_id": self.next_id}
