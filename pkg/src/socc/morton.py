"""Morton (z-order) keys over 3D lattice coordinates.

Ascending key order is the canonical order used everywhere in the codec.
Each depth level contributes one bit triplet (x, y, z) with x the most
significant, so at depth 1 the order is (0,0,1) < (0,1,0) < (1,0,0).
A key at depth d occupies 3*d bits; depth is capped at 21 so keys always
fit a single int64.  Consequences the rest of the package relies on:

  key >> 3  is the parent's key (one depth level down), and
  key & 7   is the child's triplet 4*dx + 2*dy + dz, the bit-reverse of
            the octant index  dx*1 + dy*2 + dz*4.
"""

import numpy as np

MAX_DEPTH = 21

_M0 = np.uint64(0x1FFFFF)
_M1 = np.uint64(0x1F00000000FFFF)
_M2 = np.uint64(0x1F0000FF0000FF)
_M3 = np.uint64(0x100F00F00F00F00F)
_M4 = np.uint64(0x10C30C30C30C30C3)
_M5 = np.uint64(0x1249249249249249)


def _spread(v: np.ndarray) -> np.ndarray:
    """Spread the low 21 bits of v so bit i lands at position 3*i."""
    v = v & _M0
    v = (v | (v << np.uint64(32))) & _M1
    v = (v | (v << np.uint64(16))) & _M2
    v = (v | (v << np.uint64(8))) & _M3
    v = (v | (v << np.uint64(4))) & _M4
    v = (v | (v << np.uint64(2))) & _M5
    return v


def encode(coords: np.ndarray) -> np.ndarray:
    """Morton keys for an (N, 3) integer coordinate array, as int64.

    Columns are (x, y, z); x is the most significant axis in the interleave.
    """
    c = np.asarray(coords, dtype=np.uint64)
    if c.ndim == 1:
        c = c[None, :]
    key = (_spread(c[:, 0]) << np.uint64(2)) | (_spread(c[:, 1]) << np.uint64(1)) | _spread(c[:, 2])
    return key.astype(np.int64)


def key_of(x: int, y: int, z: int) -> int:
    """Morton key of a single coordinate."""
    return int(encode(np.array([[x, y, z]], dtype=np.uint64))[0])


# Octant index is dx*1 + dy*2 + dz*4, the bit-reverse of the key triplet.
REV3 = np.array([0, 4, 2, 6, 1, 5, 3, 7], dtype=np.int64)

# Child offset (dx, dy, dz) indexed by octant.
OCTANT_OFFSETS = np.array(
    [[(d >> 0) & 1, (d >> 1) & 1, (d >> 2) & 1] for d in range(8)], dtype=np.int64
)

# Child offset (dx, dy, dz) indexed by key triplet.
TRIPLET_OFFSETS = np.array(
    [[(t >> 2) & 1, (t >> 1) & 1, (t >> 0) & 1] for t in range(8)], dtype=np.int64
)


def compare(a, b) -> int:
    """Canonical (Morton) comparison of two coordinates: -1, 0 or +1."""
    ka = key_of(*(int(v) for v in a))
    kb = key_of(*(int(v) for v in b))
    return (ka > kb) - (ka < kb)
