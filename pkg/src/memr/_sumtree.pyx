# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled sum-tree kernel; same layout and API as ``_sumtree_py``."""

import numpy as np
cimport numpy as cnp

IMPLEMENTATION = "cython"


def set_leaves(double[::1] tree, indices, values):
    cdef long long[::1] idx = np.ascontiguousarray(indices, dtype=np.int64)
    cdef double[::1] val = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t cap = tree.shape[0] // 2
    cdef Py_ssize_t n = idx.shape[0]
    cdef Py_ssize_t k, j
    if val.shape[0] != n:
        raise ValueError("indices and values differ in length")
    for k in range(n):
        j = idx[k] + cap
        tree[j] = val[k]
        j >>= 1
        while j >= 1:
            tree[j] = tree[2 * j] + tree[2 * j + 1]
            j >>= 1


def find_prefix(double[::1] tree, targets):
    cdef double[::1] us = np.ascontiguousarray(targets, dtype=np.float64)
    cdef Py_ssize_t cap = tree.shape[0] // 2
    cdef Py_ssize_t n = us.shape[0]
    out = np.empty(n, dtype=np.int64)
    cdef long long[::1] res = out
    cdef Py_ssize_t k, j
    cdef double u, left
    for k in range(n):
        u = us[k]
        j = 1
        while j < cap:
            left = tree[2 * j]
            if u >= left and tree[2 * j + 1] > 0.0:
                u -= left
                j = 2 * j + 1
            else:
                j = 2 * j
        res[k] = j - cap
    return out
