"""Neighbor index maps for the 3x3x3 sparse convolution.

For each of the 27 kernel offsets (fixed lexicographic order over
dz, dy, dx in {-1, 0, 1}) the map holds the (output row, input row) pairs
whose coordinates differ by exactly that offset.  Coordinates are packed
into disjoint 21-bit fields with a +1 bias so that applying an offset is a
constant key increment, and matches are found by one linear merge of two
sorted arrays.  Opposite offsets are transposes of each other, so only 13
joins are computed.  Built once per geometry and reused by every
convolution that runs on it.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import InvalidInputError
from .voxel import SparseGeometry

KERNEL_OFFSETS = np.array(
    [[dx, dy, dz] for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)],
    dtype=np.int64,
)
CENTER = 13
NUM_OFFSETS = 27

_FIELD_BITS = 21
_MAX_CONV_DEPTH = 20  # +1 bias and +-1 offsets must stay inside 21-bit fields


def _pack(coords: np.ndarray) -> np.ndarray:
    c = coords + 1
    return (c[:, 0] << (2 * _FIELD_BITS)) | (c[:, 1] << _FIELD_BITS) | c[:, 2]


class KernelMap:
    """Per-output-row neighbor lists in CSR form.

    For output row i, positions indptr[i]:indptr[i+1] of nbr_in / nbr_off
    give the input rows and kernel-offset indices contributing to it, in
    ascending offset order (the fixed accumulation order).
    """

    __slots__ = ("n", "indptr", "nbr_in", "nbr_off")

    def __init__(self, n: int, indptr, nbr_in, nbr_off):
        self.n = n
        self.indptr = indptr
        self.nbr_in = nbr_in
        self.nbr_off = nbr_off


def build_kernel_map(geom: SparseGeometry) -> KernelMap:
    if geom.depth > _MAX_CONV_DEPTH:
        raise InvalidInputError(
            f"sparse convolution supports depth <= {_MAX_CONV_DEPTH}, got {geom.depth}")
    n = len(geom)
    if n == 0:
        empty = np.empty(0, dtype=np.int32)
        return KernelMap(0, np.zeros(1, dtype=np.int64), empty, empty)
    packed = _pack(geom.coords)
    perm = np.argsort(packed, kind="stable")
    skeys = packed[perm]
    pairs: list = [None] * NUM_OFFSETS
    for o in range(CENTER):
        dx, dy, dz = KERNEL_OFFSETS[o]
        delta = np.int64((dx << (2 * _FIELD_BITS)) + (dy << _FIELD_BITS) + dz)
        qpos, tpos = _kernels.merge_join(skeys, delta)
        out_idx = perm[qpos]
        in_idx = perm[tpos]
        pairs[o] = (out_idx, in_idx)
        pairs[26 - o] = (in_idx, out_idx)
    rows = np.arange(n, dtype=np.int64)
    pairs[CENTER] = (rows, rows)
    out_all = np.concatenate([p[0] for p in pairs])
    in_all = np.concatenate([p[1] for p in pairs])
    off_all = np.concatenate(
        [np.full(len(p[0]), o, dtype=np.int64) for o, p in enumerate(pairs)])
    indptr, nbr_in, nbr_off = _kernels.csr_from_pairs(n, out_all, in_all, off_all)
    return KernelMap(n, indptr, nbr_in, nbr_off)
