"""End-to-end encoder/decoder and the bitstream container.

Layout: a 49-byte header (magic "RENO", version, mode flags, depth, the
quantization transform, a truncated hash of the model parameters, and the
root occupancy code), followed by a single range-coder payload spanning all
scales.  Within each scale all first-nibble symbols are coded before all
second-nibble symbols so the decoder can run each head once, vectorized.
Correctness never depends on model quality: any parameters give a lossless
round trip, they only change the payload size.
"""

from __future__ import annotations

import struct
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    CorruptStreamError,
    DepthMismatchError,
    DepthTooSmallError,
    EmptyInputError,
    UnexpectedEofError,
    UnsupportedError,
)
from .kernelmap import build_kernel_map
from .model import TopModel
from .occupancy import ScaleLayer, build_pyramid, fcg
from .rangecoder import RangeDecoder, RangeEncoder, quantize_probs_batch, table_bits
from .voxel import MAX_DEPTH, QuantizationTransform, SparseGeometry, quantize, dequantize

MAGIC = b"RENO"
VERSION = 1
FLAG_TWO_STAGE = 1
FLAG_ONE_STAGE = 2

_HEADER = struct.Struct("<4sBBBB3ddQB")
HEADER_SIZE = _HEADER.size  # 49


@dataclass
class BitstreamHeader:
    version: int
    flags: int
    depth: int
    origin: tuple[float, float, float]
    step: float
    model_id: int
    base_code: int

    @property
    def one_stage(self) -> bool:
        return bool(self.flags & FLAG_ONE_STAGE)

    def pack(self) -> bytes:
        return _HEADER.pack(MAGIC, self.version, self.flags, self.depth, 0,
                            *self.origin, self.step, self.model_id, self.base_code)

    @classmethod
    def unpack(cls, data: bytes) -> "BitstreamHeader":
        if len(data) < HEADER_SIZE:
            raise UnexpectedEofError("stream shorter than the header")
        magic, version, flags, depth, _res, ox, oy, oz, step, model_id, base_code = \
            _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise CorruptStreamError("bad magic")
        if version != VERSION:
            raise UnsupportedError(f"unsupported bitstream version {version}")
        if flags not in (FLAG_TWO_STAGE, FLAG_ONE_STAGE):
            raise CorruptStreamError(f"invalid flags {flags:#x}")
        if base_code < 1:
            raise CorruptStreamError("root occupancy code must be >= 1")
        if not 1 <= depth <= MAX_DEPTH:
            raise CorruptStreamError(f"depth {depth} outside [1, {MAX_DEPTH}]")
        return cls(version, flags, depth, (ox, oy, oz), step, model_id, base_code)


@dataclass
class EncodeSummary:
    points: int
    voxels: int
    bytes: int
    bpp: float
    per_scale_bits: list[float]
    wall_ms: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "points": self.points,
            "voxels": self.voxels,
            "bytes": self.bytes,
            "bpp": self.bpp,
            "per_scale_bits": self.per_scale_bits,
            "wall_ms": self.wall_ms,
        }


class _StageClock:
    """Accumulates wall time into the pyramid/nn/ae buckets."""

    def __init__(self):
        self.ms = {"pyramid": 0.0, "nn": 0.0, "ae": 0.0}
        self._t = None
        self._stage = None

    def start(self, stage: str):
        now = time.perf_counter()
        if self._stage is not None:
            self.ms[self._stage] += (now - self._t) * 1e3
        self._stage = stage
        self._t = now

    def stop(self):
        if self._stage is not None:
            self.ms[self._stage] += (time.perf_counter() - self._t) * 1e3
            self._stage = None


class _KmapCache:
    """Kernel maps per geometry, keeping the geometry alive so ids stay unique."""

    def __init__(self):
        self._maps = {}

    def get(self, geom: SparseGeometry):
        entry = self._maps.get(id(geom))
        if entry is None:
            entry = (geom, build_kernel_map(geom))
            self._maps[id(geom)] = entry
        return entry[1]


def encode_with_summary(geom: SparseGeometry, transform: QuantizationTransform,
                        model: TopModel, one_stage: bool = False,
                        points: int | None = None) -> tuple[bytes, EncodeSummary]:
    """Encode a voxel geometry; also returns the rate/timing summary."""
    if len(geom) == 0:
        raise EmptyInputError("cannot encode an empty geometry")
    if geom.depth < 1:
        raise DepthTooSmallError("encoding needs depth >= 1")
    if transform.depth != geom.depth:
        raise DepthMismatchError("transform depth does not match geometry depth")

    clock = _StageClock()
    clock.start("pyramid")
    pyramid = build_pyramid(geom)
    clock.stop()

    n_codes = sum(len(pyramid.layers[d].codes) for d in range(1, pyramid.depth))
    enc = RangeEncoder((1 if one_stage else 2) * 3 * n_codes + 64)
    kmaps = _KmapCache()
    per_scale_bits: list[float] = []

    for d in range(1, pyramid.depth):
        layer = pyramid.layers[d - 1]
        children = pyramid.layers[d].parents
        codes = pyramid.layers[d].codes.astype(np.int64)

        clock.start("nn")
        feats = model.trunk(layer, children, kmaps.get(layer.parents), kmaps.get(children))
        if one_stage:
            probs = model.predict_code(feats)
            clock.start("ae")
            cum = quantize_probs_batch(probs)
            syms = codes - 1
            bits = table_bits(cum, syms)
            enc.encode_block(cum, syms)
        else:
            s1 = codes >> 4
            probs1 = model.predict_s1(feats)
            clock.start("ae")
            cum1 = quantize_probs_batch(probs1)
            bits = table_bits(cum1, s1)
            enc.encode_block(cum1, s1)
            clock.start("nn")
            probs2 = model.predict_s2(feats, s1)
            clock.start("ae")
            s2 = codes & 15
            cum2 = quantize_probs_batch(probs2)
            bits += table_bits(cum2, s2)
            enc.encode_block(cum2, s2)
        clock.stop()
        per_scale_bits.append(bits)

    payload = enc.finish()
    header = BitstreamHeader(
        version=VERSION,
        flags=FLAG_ONE_STAGE if one_stage else FLAG_TWO_STAGE,
        depth=geom.depth,
        origin=transform.origin,
        step=transform.step,
        model_id=model.model_id(),
        base_code=pyramid.root_code,
    )
    blob = header.pack() + payload
    n_points = points if points is not None else len(geom)
    summary = EncodeSummary(
        points=n_points,
        voxels=len(geom),
        bytes=len(blob),
        bpp=8.0 * len(payload) / n_points,
        per_scale_bits=per_scale_bits,
        wall_ms=clock.ms,
    )
    return blob, summary


def encode(geom: SparseGeometry, transform: QuantizationTransform, model: TopModel,
           one_stage: bool = False) -> bytes:
    return encode_with_summary(geom, transform, model, one_stage)[0]


def decode_with_summary(data: bytes, model: TopModel, strict: bool = False):
    """Decode a stream; returns (geometry, transform, wall_ms)."""
    header = BitstreamHeader.unpack(data)
    if header.model_id != model.model_id():
        msg = (f"stream was encoded with model {header.model_id:016x}, "
               f"decoding with {model.model_id():016x}")
        if strict:
            raise CorruptStreamError(msg)
        warnings.warn(msg)

    clock = _StageClock()
    dec = RangeDecoder(data[HEADER_SIZE:])
    kmaps = _KmapCache()

    root = SparseGeometry(0, np.zeros((1, 3), dtype=np.int64))
    layer = ScaleLayer(root, np.array([header.base_code], dtype=np.uint8), validate=False)

    for _d in range(1, header.depth):
        clock.start("pyramid")
        children = fcg(layer)
        clock.start("nn")
        feats = model.trunk(layer, children, kmaps.get(layer.parents), kmaps.get(children))
        n = len(children)
        if header.one_stage:
            probs = model.predict_code(feats)
            clock.start("ae")
            cum = quantize_probs_batch(probs)
            codes = dec.decode_block(cum, n) + 1
        else:
            probs1 = model.predict_s1(feats)
            clock.start("ae")
            cum1 = quantize_probs_batch(probs1)
            s1 = dec.decode_block(cum1, n)
            clock.start("nn")
            probs2 = model.predict_s2(feats, s1)
            clock.start("ae")
            cum2 = quantize_probs_batch(probs2)
            s2 = dec.decode_block(cum2, n)
            codes = (s1 << 4) | s2
            if codes.size and codes.min() < 1:
                raise CorruptStreamError("decoded an occupancy code of 0")
        clock.stop()
        layer = ScaleLayer(children, codes.astype(np.uint8), validate=False)

    clock.start("pyramid")
    geom = fcg(layer)
    clock.stop()
    transform = QuantizationTransform(header.origin, header.step, header.depth)
    return geom, transform, clock.ms


def decode(data: bytes, model: TopModel, strict: bool = False):
    """Decode a stream; returns (geometry, transform)."""
    geom, transform, _ = decode_with_summary(data, model, strict)
    return geom, transform


def encode_file(points, depth: int, model: TopModel,
                one_stage: bool = False) -> tuple[bytes, EncodeSummary]:
    """Quantize a metric cloud and encode it; lossy only through quantization."""
    pts = np.asarray(points, dtype=np.float64)
    geom, transform = quantize(pts, depth)
    return encode_with_summary(geom, transform, model, one_stage, points=len(pts))


def decode_file(data: bytes, model: TopModel, strict: bool = False) -> np.ndarray:
    """Decode a stream and map the voxels back to metric points."""
    geom, transform = decode(data, model, strict)
    return dequantize(geom, transform)
