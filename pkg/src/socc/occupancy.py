"""Occupancy-code pyramid: downscaling (FOG), expansion (FCG), and chaining.

A ScaleLayer pairs parent voxels at depth d-1 with 8-bit occupancy codes
whose set bits mark occupied children at depth d.  Because the geometry is
Morton-sorted, downscaling is a single linear pass (children of one parent
are contiguous and their octant is just `key & 7`), and expansion emits
children already in canonical order.
"""

from __future__ import annotations

import numpy as np

from . import morton
from .errors import (
    CorruptPyramidError,
    DepthUnderflowError,
    EmptyInputError,
    InvalidCodeError,
    InvalidInputError,
    NotAChildError,
)
from .voxel import SparseGeometry


def octant_of(child, parent) -> int:
    """Index 0..7 of a child voxel within its parent's 2x2x2 block."""
    c = np.asarray(child, dtype=np.int64)
    p = np.asarray(parent, dtype=np.int64)
    off = c - 2 * p
    if off.min() < 0 or off.max() > 1:
        raise NotAChildError(f"{tuple(c)} is not a child of {tuple(p)}")
    return int(off[0] + 2 * off[1] + 4 * off[2])


class ScaleLayer:
    """Parents at depth d-1 with one occupancy code per parent."""

    __slots__ = ("parents", "codes")

    def __init__(self, parents: SparseGeometry, codes, *, validate: bool = True):
        codes = np.ascontiguousarray(codes, dtype=np.uint8)
        if validate:
            if codes.ndim != 1 or len(codes) != len(parents):
                raise InvalidInputError("codes must align 1:1 with parents")
            if codes.size and codes.min() < 1:
                raise InvalidCodeError("occupancy codes must be in [1, 255]")
        self.parents = parents
        self.codes = codes

    @property
    def depth(self) -> int:
        return self.parents.depth

    def __len__(self) -> int:
        return len(self.codes)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ScaleLayer):
            return NotImplemented
        return self.parents == other.parents and bool(np.array_equal(self.codes, other.codes))

    def __repr__(self) -> str:
        return f"ScaleLayer(depth={self.depth}, n={len(self)})"

    def child_count(self) -> int:
        return int(np.unpackbits(self.codes).sum())


def fog(geom: SparseGeometry) -> ScaleLayer:
    """Downscale one level: unique parents plus the occupancy code of each.

    Equivalent to the fixed-weight [1,2,4,8,16,32,64,128] stride-2 aggregation:
    children sharing `key >> 3` are one parent, and each child contributes
    bit `key & 7`.
    """
    if geom.depth < 1:
        raise DepthUnderflowError("cannot downscale below depth 0")
    if len(geom) == 0:
        return ScaleLayer(SparseGeometry(geom.depth - 1, np.empty((0, 3), np.int64)),
                          np.empty(0, np.uint8))
    keys = geom.keys
    pkeys = keys >> 3
    first = np.empty(len(keys), dtype=bool)
    first[0] = True
    np.not_equal(pkeys[1:], pkeys[:-1], out=first[1:])
    starts = np.flatnonzero(first)
    octants = morton.REV3[keys & 7]
    bits = (np.uint8(1) << octants.astype(np.uint8))
    codes = np.bitwise_or.reduceat(bits, starts)
    parents = SparseGeometry(geom.depth - 1, geom.coords[starts] >> 1,
                             keys=pkeys[starts], validate=False)
    return ScaleLayer(parents, codes, validate=False)


def fcg(layer: ScaleLayer) -> SparseGeometry:
    """Expand codes back into child coordinates (inverse of fog).

    Children are emitted parent-major in ascending octant, which is already
    canonical order, so no re-sort is needed.
    """
    codes = layer.codes
    if codes.size and codes.min() < 1:
        raise InvalidCodeError("occupancy code 0 encountered")
    if len(codes) == 0:
        return SparseGeometry(layer.depth + 1, np.empty((0, 3), np.int64))
    bits = np.unpackbits(codes[:, None], axis=1, bitorder="little")
    # Column t of the reordered table is octant REV3[t], so nonzero() emits
    # children parent-major in ascending key triplet: already canonical.
    rows, triplets = np.nonzero(bits[:, morton.REV3])
    child_keys = (layer.parents.keys[rows] << 3) | triplets
    child_coords = (layer.parents.coords[rows] << 1) + morton.TRIPLET_OFFSETS[triplets]
    return SparseGeometry(layer.depth + 1, child_coords, keys=child_keys, validate=False)


class Pyramid:
    """All ScaleLayers of a geometry, shallowest first (layer i at depth i)."""

    __slots__ = ("depth", "layers")

    def __init__(self, depth: int, layers: list[ScaleLayer]):
        self.depth = int(depth)
        self.layers = layers

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def root_code(self) -> int:
        return int(self.layers[0].codes[0])


def build_pyramid(geom: SparseGeometry) -> Pyramid:
    """Repeated fog from depth D down to the single root voxel."""
    if len(geom) == 0:
        raise EmptyInputError("cannot build a pyramid from an empty geometry")
    if geom.depth < 1:
        raise DepthUnderflowError("pyramid needs depth >= 1")
    layers: list[ScaleLayer] = []
    g = geom
    while g.depth > 0:
        layer = fog(g)
        layers.append(layer)
        g = layer.parents
    layers.reverse()
    return Pyramid(geom.depth, layers)


def reconstruct_pyramid(pyramid: Pyramid) -> SparseGeometry:
    """Fold fcg over the layers, checking chain consistency along the way."""
    g = fcg(pyramid.layers[0])
    for layer in pyramid.layers[1:]:
        if g != layer.parents:
            raise CorruptPyramidError(
                f"layer at depth {layer.depth} disagrees with expansion of the previous layer")
        g = fcg(layer)
    return g
