"""Minimal sparse-tensor network engine with explicit reverse-mode gradients.

Each layer owns its parameters and implements forward/backward by hand;
backward accumulates into Parameter.grad.  Activations follow the dtype of
their inputs, parameters the dtype they were created with: float32 for
deployment, float64 for gradient checks (see set_default_dtype).  All
accumulation orders are fixed (convolutions run offset-major over the 27
kernel offsets), so forward passes are reproducible bit for bit.
"""

from __future__ import annotations

import struct

import numpy as np

from . import _kernels
from .errors import ParseError
from .kernelmap import NUM_OFFSETS, KernelMap

_LOG2E = 1.0 / np.log(2.0)
PROB_EPS = 1e-9

_default_dtype = np.float32


def set_default_dtype(dtype) -> None:
    """Set the dtype used for newly created parameters (float32 or float64)."""
    global _default_dtype
    if dtype not in (np.float32, np.float64):
        raise ValueError("dtype must be float32 or float64")
    _default_dtype = dtype


def get_default_dtype():
    return _default_dtype


class Parameter:
    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.ascontiguousarray(value, dtype=_default_dtype)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.value.shape})"


def uniform_fan_in(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    lim = np.sqrt(1.0 / fan_in)
    return rng.uniform(-lim, lim, size=shape)


class Embedding:
    """Lookup table (V, C); gradient scatters additively into the rows used."""

    def __init__(self, name: str, vocab: int, channels: int):
        self.table = Parameter(name, np.zeros((vocab, channels)))
        self._idx = None

    def init(self, rng: np.random.Generator, sigma: float = 0.02) -> None:
        self.table.value[...] = rng.normal(0.0, sigma, self.table.shape)

    def forward(self, indices: np.ndarray) -> np.ndarray:
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= self.table.shape[0]):
            raise IndexError("embedding index out of range")
        self._idx = indices
        return self.table.value[indices]

    def backward(self, d_out: np.ndarray) -> None:
        np.add.at(self.table.grad, self._idx, d_out)

    def params(self):
        return [self.table]


class Linear:
    def __init__(self, name: str, c_in: int, c_out: int):
        self.w = Parameter(f"{name}.w", np.zeros((c_in, c_out)))
        self.b = Parameter(f"{name}.b", np.zeros(c_out))
        self._x = None

    def init(self, rng: np.random.Generator) -> None:
        self.w.value[...] = uniform_fan_in(rng, self.w.shape[0], self.w.shape)
        self.b.value[...] = uniform_fan_in(rng, self.w.shape[0], self.b.shape)

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.w.value + self.b.value

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        self.w.grad += self._x.T @ d_out
        self.b.grad += d_out.sum(axis=0)
        return d_out @ self.w.value.T

    def params(self):
        return [self.w, self.b]


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0)

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        return np.where(self._mask, d_out, 0)

    def params(self):
        return []


class SparseConv3:
    """3x3x3, stride 1 convolution over a coordinate set, output on the same set.

    out[i] = b + sum_o W[o] . feat(coord_i + offset_o); missing neighbors
    contribute nothing.  Offsets accumulate in fixed order 0..26, so results
    do not depend on how the kernel map was built.
    """

    def __init__(self, name: str, c_in: int, c_out: int):
        self.w = Parameter(f"{name}.w", np.zeros((NUM_OFFSETS, c_in, c_out)))
        self.b = Parameter(f"{name}.b", np.zeros(c_out))
        self._x = None
        self._kmap = None

    def init(self, rng: np.random.Generator) -> None:
        fan_in = NUM_OFFSETS * self.w.shape[1]
        self.w.value[...] = uniform_fan_in(rng, fan_in, self.w.shape)
        self.b.value[...] = uniform_fan_in(rng, fan_in, self.b.shape)

    def forward(self, x: np.ndarray, kmap: KernelMap) -> np.ndarray:
        if len(x) != kmap.n:
            raise ValueError("feature rows do not match the kernel map geometry")
        x = np.ascontiguousarray(x)
        self._x, self._kmap = x, kmap
        w = self.w.value
        if x.dtype != w.dtype:
            raise TypeError(f"activation dtype {x.dtype} != parameter dtype {w.dtype}")
        return _kernels.conv_forward(x, w, self.b.value,
                                     kmap.indptr, kmap.nbr_in, kmap.nbr_off)

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        x, kmap = self._x, self._kmap
        dx = np.zeros_like(x)
        _kernels.conv_backward(x, np.ascontiguousarray(d_out), self.w.value,
                               kmap.indptr, kmap.nbr_in, kmap.nbr_off,
                               self.w.grad, self.b.grad, dx)
        return dx

    def params(self):
        return [self.w, self.b]


class ResBlock:
    """conv3 -> ReLU -> conv3 with an additive skip, no normalization."""

    def __init__(self, name: str, channels: int):
        self.conv1 = SparseConv3(f"{name}.conv1", channels, channels)
        self.relu = ReLU()
        self.conv2 = SparseConv3(f"{name}.conv2", channels, channels)

    def init(self, rng: np.random.Generator) -> None:
        self.conv1.init(rng)
        self.conv2.init(rng)

    def forward(self, x: np.ndarray, kmap: KernelMap) -> np.ndarray:
        h = self.conv1.forward(x, kmap)
        a = self.relu.forward(h)
        return self.conv2.forward(a, kmap) + x

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        da = self.conv2.backward(d_out)
        dh = self.relu.backward(da)
        return self.conv1.backward(dh) + d_out

    def params(self):
        return self.conv1.params() + self.conv2.params()


class Mlp:
    """linear(C -> C) -> ReLU -> linear(C -> K) head."""

    def __init__(self, name: str, channels: int, classes: int):
        self.lin1 = Linear(f"{name}.lin1", channels, channels)
        self.relu = ReLU()
        self.lin2 = Linear(f"{name}.lin2", channels, classes)

    def init(self, rng: np.random.Generator) -> None:
        self.lin1.init(rng)
        self.lin2.init(rng)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.lin2.forward(self.relu.forward(self.lin1.forward(x)))

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        return self.lin1.backward(self.relu.backward(self.lin2.backward(d_out)))

    def params(self):
        return self.lin1.params() + self.lin2.params()


def softmax(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by max subtraction."""
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


_clamp_count = 0


def clamp_warnings() -> int:
    """Number of times cross_entropy_bits clamped a zero probability."""
    return _clamp_count


def reset_clamp_warnings() -> None:
    global _clamp_count
    _clamp_count = 0


def cross_entropy_bits(probs: np.ndarray, targets: np.ndarray) -> float:
    """Sum over rows of -log2 probs[i, target_i], clamping at 1e-9."""
    global _clamp_count
    targets = np.asarray(targets, dtype=np.int64)
    if targets.size and (targets.min() < 0 or targets.max() >= probs.shape[1]):
        raise IndexError("target outside class range")
    pt = probs[np.arange(len(targets)), targets]
    low = pt < PROB_EPS
    if low.any():
        _clamp_count += int(low.sum())
        pt = np.maximum(pt, PROB_EPS)
    return float(-np.log2(pt).sum())


def softmax_xent_bits(logits: np.ndarray, targets: np.ndarray):
    """Fused softmax + cross-entropy in bits.

    Returns (loss_bits, probs, d_logits); d_logits = (p - onehot) / ln 2.
    """
    targets = np.asarray(targets, dtype=np.int64)
    probs = softmax(logits)
    loss = cross_entropy_bits(probs, targets)
    d = probs * np.asarray(_LOG2E, dtype=logits.dtype)
    d[np.arange(len(targets)), targets] -= np.asarray(_LOG2E, dtype=logits.dtype)
    return loss, probs, d


class Adam:
    """Adam with bias correction; a step with any non-finite gradient is
    skipped entirely and counted in .skipped."""

    def __init__(self, params: list[Parameter], lr: float = 5e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.skipped = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> bool:
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                self.skipped += 1
                return False
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return True


# --- parameter file format -------------------------------------------------
#
# magic "RNNW", version u8, tensor count u32; per tensor: name length u16,
# UTF-8 name, rank u8, dims u32 each, raw float32 little-endian values.

PARAM_MAGIC = b"RNNW"
PARAM_VERSION = 1


def serialize_tensors(named: list[tuple[str, np.ndarray]]) -> bytes:
    out = [PARAM_MAGIC, struct.pack("<BI", PARAM_VERSION, len(named))]
    for name, arr in named:
        nb = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def deserialize_tensors(data: bytes) -> list[tuple[str, np.ndarray]]:
    if len(data) < 9 or data[:4] != PARAM_MAGIC:
        raise ParseError("not a RNNW parameter blob")
    version, count = struct.unpack_from("<BI", data, 4)
    if version != PARAM_VERSION:
        raise ParseError(f"unsupported RNNW version {version}")
    pos = 9
    named = []
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", data, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            nbytes = 4 * int(np.prod(dims, dtype=np.int64)) if rank else 4
            if pos + nbytes > len(data):
                raise ParseError("RNNW tensor data truncated")
            arr = np.frombuffer(data[pos:pos + nbytes], dtype="<f4").reshape(dims)
            pos += nbytes
            named.append((name, arr.copy()))
    except struct.error as exc:
        raise ParseError("RNNW header truncated") from exc
    if pos != len(data):
        raise ParseError(f"RNNW size mismatch: {len(data) - pos} trailing bytes")
    return named


def save_tensors(path, named) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_tensors(named))


def load_tensors(path) -> list[tuple[str, np.ndarray]]:
    with open(path, "rb") as fh:
        return deserialize_tensors(fh.read())


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    return int(_kernels.fnv1a64(np.frombuffer(data, dtype=np.uint8)))
