"""Integer range coder and probability quantization.

The coder is a 64-bit-state, byte-renormalizing range coder over
cumulative-frequency tables that always total 2^16.  Carries propagate
backwards through the emitted bytes, so a single buffer spans the whole
stream; per-symbol efficiency loss is below 2^-40 bits.  Stream layout:
one carry-headroom lead byte, renormalization bytes, then an 8-byte flush.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import InvalidProbabilityError, UnexpectedEofError

TOTAL = 65536  # sum of every frequency table
_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_FLUSH_BYTES = 9  # lead byte + 8 state bytes


class CdfTable:
    """Cumulative frequencies for one symbol: cum[0]=0, cum[K]=65536, all freqs >= 1."""

    __slots__ = ("cum",)

    def __init__(self, cum):
        cum = np.ascontiguousarray(cum, dtype=np.uint32)
        if cum.ndim != 1 or len(cum) < 2:
            raise InvalidProbabilityError("cum must be a 1-D array of at least 2 entries")
        if cum[0] != 0 or cum[-1] != TOTAL or not np.all(np.diff(cum.astype(np.int64)) >= 1):
            raise InvalidProbabilityError("cum must rise strictly from 0 to 65536")
        self.cum = cum

    @property
    def num_symbols(self) -> int:
        return len(self.cum) - 1

    def freq(self, symbol: int) -> int:
        return int(self.cum[symbol + 1] - self.cum[symbol])


def quantize_probs_batch(p: np.ndarray) -> np.ndarray:
    """Quantize (N, K) probability rows into (N, K+1) uint32 cumulative tables.

    Frequencies are floor(p * 65536) floored at 1; the shortfall to 65536 is
    assigned by largest remainder (ties to the lowest symbol), any excess is
    taken from the largest frequency.  Deterministic for identical input.
    """
    p = np.asarray(p)
    if p.dtype not in (np.float32, np.float64):
        p = p.astype(np.float64)
    if p.ndim == 1:
        p = p[None, :]
    if p.ndim != 2 or p.shape[1] < 2:
        raise InvalidProbabilityError(f"expected (N, K>=2) probabilities, got {p.shape}")
    n, k = p.shape
    cum = np.zeros((n, k + 1), dtype=np.uint32)
    if n:
        bad = _kernels.quantize_cdf_rows(np.ascontiguousarray(p), cum)
        if bad >= 0:
            raise InvalidProbabilityError(
                f"row {bad}: probabilities must be finite, non-negative and sum to 1")
    return cum


def quantize_probs(p) -> CdfTable:
    """Quantize one probability row into a CdfTable."""
    return CdfTable(quantize_probs_batch(np.asarray(p, dtype=np.float64))[0])


def table_bits(cum: np.ndarray, symbols: np.ndarray) -> float:
    """Ideal code length in bits of symbols under quantized tables (N, K+1)."""
    symbols = np.asarray(symbols, dtype=np.int64)
    lo = np.take_along_axis(cum, symbols[:, None], axis=1)[:, 0].astype(np.int64)
    hi = np.take_along_axis(cum, symbols[:, None] + 1, axis=1)[:, 0].astype(np.int64)
    return float(-np.log2((hi - lo) / TOTAL).sum())


class RangeEncoder:
    """Streaming encoder; encode_block may be called many times before finish."""

    def __init__(self, capacity_hint: int = 1 << 12):
        self._buf = np.zeros(max(capacity_hint, 64), dtype=np.uint8)
        self._pos = 1  # buf[0] is the carry-headroom lead byte
        self._low = np.uint64(0)
        self._range = _MASK64
        self._done = False

    def _reserve(self, extra: int) -> None:
        # worst case 2 payload bytes per symbol (freq >= 1 -> <= 16 bits) + slack
        need = self._pos + 3 * extra + 16
        if need > len(self._buf):
            grown = np.zeros(max(need, 2 * len(self._buf)), dtype=np.uint8)
            grown[: self._pos] = self._buf[: self._pos]
            self._buf = grown

    def encode_block(self, cum: np.ndarray, symbols: np.ndarray) -> None:
        """Encode symbols[i] under table row cum[i] ((N, K+1) uint32)."""
        assert not self._done
        symbols = np.asarray(symbols, dtype=np.int64)
        if len(symbols) == 0:
            return
        self._reserve(len(symbols))
        cumlo = np.take_along_axis(cum, symbols[:, None], axis=1)[:, 0].astype(np.uint32)
        cumhi = np.take_along_axis(cum, symbols[:, None] + 1, axis=1)[:, 0].astype(np.uint32)
        pos, low, rng = _kernels.rc_encode_block(
            self._buf, self._pos, np.uint64(self._low), np.uint64(self._range), cumlo, cumhi)
        self._pos, self._low, self._range = pos, np.uint64(low), np.uint64(rng)

    def finish(self) -> bytes:
        assert not self._done
        self._reserve(0)
        self._pos = _kernels.rc_flush(self._buf, self._pos, np.uint64(self._low))
        self._done = True
        return bytes(self._buf[: self._pos])


class RangeDecoder:
    """Streaming decoder over one payload produced by RangeEncoder."""

    def __init__(self, data: bytes):
        self._data = np.frombuffer(data, dtype=np.uint8)
        if len(self._data) < _FLUSH_BYTES:
            raise UnexpectedEofError("payload shorter than coder flush")
        code = np.uint64(0)
        for i in range(1, 9):  # skip the lead byte
            code = (code << np.uint64(8)) | np.uint64(self._data[i])
        self._pos = 9
        self._code = code
        self._range = _MASK64

    def decode_block(self, cum: np.ndarray, count: int) -> np.ndarray:
        """Decode `count` symbols, one row of cum per symbol."""
        out = np.empty(count, dtype=np.int64)
        if count == 0:
            return out
        if cum.shape[0] != count:
            raise ValueError("one cum row per symbol required")
        pos, code, rng, err = _kernels.rc_decode_block(
            self._data, self._pos, np.uint64(self._code), np.uint64(self._range),
            np.ascontiguousarray(cum, dtype=np.uint32), out)
        if err:
            raise UnexpectedEofError("range-coded payload truncated")
        self._pos, self._code, self._range = pos, np.uint64(code), np.uint64(rng)
        return out

    @property
    def consumed(self) -> int:
        return self._pos


def _tables_to_cum(tables, count: int) -> np.ndarray:
    if isinstance(tables, CdfTable):
        return np.broadcast_to(tables.cum, (count, len(tables.cum)))
    if isinstance(tables, np.ndarray):
        return tables
    return np.stack([t.cum for t in tables])


def range_encode(symbols, tables) -> bytes:
    """One-shot encode; `tables` is a CdfTable, a list of them, or an (N, K+1) array."""
    symbols = np.asarray(symbols, dtype=np.int64)
    enc = RangeEncoder(3 * len(symbols) + 64)
    enc.encode_block(_tables_to_cum(tables, len(symbols)), symbols)
    return enc.finish()


def range_decode(data: bytes, tables, count: int | None = None) -> np.ndarray:
    """One-shot decode of `count` symbols (len(tables) if omitted)."""
    if count is None:
        count = len(tables)
    dec = RangeDecoder(data)
    return dec.decode_block(_tables_to_cum(tables, count), count)
