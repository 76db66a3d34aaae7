"""Sum tree over leaf weights with O(log n) updates and prefix-sum descent.

The compiled kernel is used when it was built; set ``MEMR_PURE_PYTHON=1``
to force the numpy fallback.
"""

from __future__ import annotations

import os

import numpy as np

from memr import _sumtree_py

if os.environ.get("MEMR_PURE_PYTHON") == "1":
    _kernel = _sumtree_py
else:
    try:
        from memr import _sumtree as _kernel
    except ImportError:
        _kernel = _sumtree_py

KERNELS = {"python": _sumtree_py}
if _kernel is not _sumtree_py:
    KERNELS["cython"] = _kernel


def _next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


class SumTree:
    def __init__(self, capacity: int, kernel=None):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = _next_pow2(capacity)
        self.tree = np.zeros(2 * self.capacity, dtype=np.float64)
        self.kernel = _kernel if kernel is None else kernel

    @property
    def total(self) -> float:
        return float(self.tree[1])

    @property
    def leaves(self) -> np.ndarray:
        return self.tree[self.capacity:]

    def set(self, indices, values):
        indices = np.atleast_1d(np.asarray(indices, dtype=np.int64))
        values = np.atleast_1d(np.asarray(values, dtype=np.float64))
        if indices.size and (indices.min() < 0 or indices.max() >= self.capacity):
            raise IndexError("leaf index out of range")
        if np.any(values < 0):
            raise ValueError("leaf values must be nonnegative")
        self.kernel.set_leaves(self.tree, indices, values)

    def find(self, targets) -> np.ndarray:
        targets = np.atleast_1d(np.asarray(targets, dtype=np.float64))
        return self.kernel.find_prefix(self.tree, targets)

    def load_leaves(self, leaves):
        """Replace all leaves at once and rebuild internal sums bottom-up."""
        leaves = np.asarray(leaves, dtype=np.float64)
        if leaves.shape != (self.capacity,):
            raise ValueError("leaf array has wrong length")
        self.tree[:] = 0.0
        self.tree[self.capacity:] = leaves
        for j in range(self.capacity - 1, 0, -1):
            self.tree[j] = self.tree[2 * j] + self.tree[2 * j + 1]
