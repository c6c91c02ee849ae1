"""Lattice geometry: canonical ordering, quantization, point-cloud helpers.

A SparseGeometry is a depth-tagged set of occupied voxels kept strictly
sorted by Morton key; everything downstream (pyramid, features, symbol
streams) assumes and preserves this canonical order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import morton
from .errors import (
    DepthMismatchError,
    EmptyInputError,
    InvalidInputError,
)

MAX_DEPTH = morton.MAX_DEPTH


def as_point_array(points) -> np.ndarray:
    """Validate and return points as a float64 (N, 3) array."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1 and pts.size == 0:
        pts = pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InvalidInputError(f"expected (N, 3) points, got shape {pts.shape}")
    if pts.size and not np.all(np.isfinite(pts)):
        raise InvalidInputError("point cloud contains non-finite coordinates")
    return pts


class SparseGeometry:
    """Occupied voxels of one scale, canonically ordered and duplicate-free."""

    __slots__ = ("depth", "coords", "_keys")

    def __init__(self, depth: int, coords, *, keys: np.ndarray | None = None,
                 validate: bool = True):
        depth = int(depth)
        coords = np.ascontiguousarray(coords, dtype=np.int64)
        if coords.size == 0:
            coords = coords.reshape(0, 3)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise InvalidInputError(f"expected (N, 3) coords, got shape {coords.shape}")
        if not 0 <= depth <= MAX_DEPTH:
            raise InvalidInputError(f"depth {depth} outside [0, {MAX_DEPTH}]")
        self.depth = depth
        self.coords = coords
        self._keys = keys
        if validate:
            self._validate()

    def _validate(self) -> None:
        n = len(self.coords)
        if n == 0:
            return
        lim = 1 << self.depth
        if self.coords.min() < 0 or self.coords.max() >= lim:
            raise InvalidInputError(f"coordinates outside [0, 2^{self.depth})")
        keys = self.keys
        if n > 1 and not np.all(np.diff(keys) > 0):
            raise InvalidInputError("coords not strictly increasing in canonical order")

    @classmethod
    def from_unsorted(cls, depth: int, coords) -> "SparseGeometry":
        """Canonicalize arbitrary integer coordinates: sort by Morton key, drop duplicates."""
        coords = np.asarray(coords, dtype=np.int64)
        if coords.size == 0:
            return cls(depth, coords)
        keys = morton.encode(coords)
        order = np.argsort(keys, kind="stable")
        keys = keys[order]
        keep = np.ones(len(keys), dtype=bool)
        keep[1:] = keys[1:] != keys[:-1]
        return cls(depth, coords[order][keep], keys=keys[keep])

    @property
    def keys(self) -> np.ndarray:
        """Morton keys aligned with coords (cached)."""
        if self._keys is None:
            self._keys = morton.encode(self.coords)
        return self._keys

    def __len__(self) -> int:
        return len(self.coords)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseGeometry):
            return NotImplemented
        return self.depth == other.depth and self.coords.shape == other.coords.shape \
            and bool(np.array_equal(self.coords, other.coords))

    def __repr__(self) -> str:
        return f"SparseGeometry(depth={self.depth}, n={len(self)})"


@dataclass(frozen=True)
class QuantizationTransform:
    """Affine map between metric space and the voxel lattice at a given depth."""

    origin: tuple[float, float, float]
    step: float
    depth: int

    def __post_init__(self):
        if not self.step > 0:
            raise InvalidInputError("quantization step must be positive")


def canonical_order(a, b) -> int:
    """Total order over coordinates: -1 if a before b, 0 if equal, +1 after."""
    return morton.compare(a, b)


def quantize(points, depth: int) -> tuple[SparseGeometry, QuantizationTransform]:
    """Snap a metric point cloud onto the depth-D lattice.

    origin is the per-axis minimum, step spreads the largest extent across
    2^D - 1 cells (step 1 for degenerate clouds), and indices round half-up
    via floor(u + 0.5).  Duplicates collapse; output is canonically ordered.
    """
    pts = as_point_array(points)
    if len(pts) == 0:
        raise EmptyInputError("cannot quantize an empty point cloud")
    depth = int(depth)
    if not 1 <= depth <= MAX_DEPTH:
        raise InvalidInputError(f"depth {depth} outside [1, {MAX_DEPTH}]")
    origin = pts.min(axis=0)
    extent = float((pts.max(axis=0) - origin).max())
    step = extent / ((1 << depth) - 1) if extent > 0 else 1.0
    idx = np.floor((pts - origin) / step + 0.5).astype(np.int64)
    np.clip(idx, 0, (1 << depth) - 1, out=idx)
    geom = SparseGeometry.from_unsorted(depth, idx)
    return geom, QuantizationTransform(tuple(float(v) for v in origin), step, depth)


def dequantize(geom: SparseGeometry, transform: QuantizationTransform) -> np.ndarray:
    """Map voxel indices back to metric points: p = origin + step * index."""
    if geom.depth != transform.depth:
        raise DepthMismatchError(
            f"geometry depth {geom.depth} != transform depth {transform.depth}")
    return np.asarray(transform.origin) + transform.step * geom.coords.astype(np.float64)
