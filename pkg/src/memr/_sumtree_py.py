"""Pure-Python sum-tree kernel (fallback for the compiled ``_sumtree``).

The tree is a flat float64 array of length ``2 * capacity`` in heap order:
node 1 is the root, node ``j`` has children ``2j`` and ``2j + 1`` and leaf
``i`` lives at ``capacity + i``.  Index 0 is unused.
"""

import numpy as np

IMPLEMENTATION = "python"


def set_leaves(tree, indices, values):
    cap = tree.shape[0] // 2
    for i, v in zip(np.asarray(indices, dtype=np.int64).tolist(),
                    np.asarray(values, dtype=np.float64).tolist()):
        j = i + cap
        tree[j] = v
        j >>= 1
        # recompute parents from children so no rounding drift accumulates
        while j >= 1:
            tree[j] = tree[2 * j] + tree[2 * j + 1]
            j >>= 1


def find_prefix(tree, targets):
    """Leaf index whose cumulative range ``[before, after)`` contains each target."""
    cap = tree.shape[0] // 2
    u = np.array(targets, dtype=np.float64, copy=True)
    j = np.ones(u.shape[0], dtype=np.int64)
    while cap > 1 and j[0] < cap:
        left = tree[2 * j]
        right = tree[2 * j + 1]
        go_right = (u >= left) & (right > 0.0)
        u -= np.where(go_right, left, 0.0)
        j = 2 * j + go_right
    return j - cap
