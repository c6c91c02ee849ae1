"""numba-compiled inner loops.

The pieces that are inherently sequential or too gather-heavy for
vectorized numpy live here: the range-coder symbol loops, the sorted-key
merge join and CSR assembly behind sparse-convolution neighbor maps, the
convolution gather kernels themselves, probability-table quantization, and
the FNV-1a hash.  cache=True persists compilation across processes.
"""

import numpy as np
from numba import njit

_U64 = np.uint64
_TOP56 = _U64(1) << _U64(56)
_SHIFT16 = _U64(16)
_SHIFT56 = _U64(56)
_SHIFT8 = _U64(8)
_TOTAL_BITS = 16  # CDF tables always sum to 2^16


@njit(cache=True)
def rc_encode_block(buf, pos, low, rng, cumlo, cumhi):
    """Encode one block of symbols given per-symbol cumulative bounds.

    buf is the whole-stream byte buffer (carries may propagate into bytes
    emitted by earlier blocks, which is why one buffer spans all blocks).
    Returns the updated (pos, low, rng) state.
    """
    for k in range(cumlo.shape[0]):
        r = rng >> _SHIFT16
        add = r * _U64(cumlo[k])
        nlow = low + add
        if nlow < low:  # carry out of the 64-bit window
            i = pos - 1
            while True:
                buf[i] += np.uint8(1)
                if buf[i] != 0:
                    break
                i -= 1
        low = nlow
        rng = r * _U64(cumhi[k] - cumlo[k])
        while rng < _TOP56:
            buf[pos] = np.uint8(low >> _SHIFT56)
            pos += 1
            low = low << _SHIFT8
            rng = rng << _SHIFT8
    return pos, low, rng


@njit(cache=True)
def rc_flush(buf, pos, low):
    """Emit the final 8 bytes of state."""
    for _ in range(8):
        buf[pos] = np.uint8(low >> _SHIFT56)
        pos += 1
        low = low << _SHIFT8
    return pos


@njit(cache=True)
def rc_decode_block(data, dpos, code, rng, cum, out):
    """Decode len(out) symbols, one row of cum per symbol.

    cum is (n, K+1) uint32 with cum[:, 0] == 0 and cum[:, K] == 2^16.
    Returns (dpos, code, rng, err) with err=1 on input underrun.
    """
    n_bytes = data.shape[0]
    kmax = cum.shape[1] - 1
    top = _U64(1) << _U64(_TOTAL_BITS)
    for k in range(out.shape[0]):
        r = rng >> _SHIFT16
        dv = code // r
        if dv >= top:
            dv = top - _U64(1)
        # binary search: find s with cum[k, s] <= dv < cum[k, s+1]
        lo = 0
        hi = kmax
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if _U64(cum[k, mid]) <= dv:
                lo = mid
            else:
                hi = mid
        out[k] = lo
        code = code - r * _U64(cum[k, lo])
        rng = r * _U64(cum[k, lo + 1] - cum[k, lo])
        while rng < _TOP56:
            if dpos >= n_bytes:
                return dpos, code, rng, 1
            code = (code << _SHIFT8) | _U64(data[dpos])
            dpos += 1
            rng = rng << _SHIFT8
    return dpos, code, rng, 0


@njit(cache=True)
def merge_join(sorted_keys, delta):
    """Positions (qi, ti) with sorted_keys[qi] + delta == sorted_keys[ti].

    Both sides ascend, so a single linear merge suffices.
    """
    n = sorted_keys.shape[0]
    out_pos = np.empty(n, dtype=np.int64)
    in_pos = np.empty(n, dtype=np.int64)
    i = 0
    j = 0
    cnt = 0
    while i < n and j < n:
        q = sorted_keys[i] + delta
        t = sorted_keys[j]
        if q == t:
            out_pos[cnt] = i
            in_pos[cnt] = j
            cnt += 1
            i += 1
            j += 1
        elif q < t:
            i += 1
        else:
            j += 1
    return out_pos[:cnt], in_pos[:cnt]


@njit(cache=True)
def fnv1a64(data):
    """FNV-1a over a uint8 array, 64-bit."""
    h = _U64(0xCBF29CE484222325)
    prime = _U64(0x100000001B3)
    for i in range(data.shape[0]):
        h = (h ^ _U64(data[i])) * prime
    return h


@njit(cache=True)
def csr_from_pairs(n, out_all, in_all, off_all):
    """Group offset-major (out, in, offset) pairs into per-output-row lists.

    The counting fill is stable, so each row's neighbors stay in ascending
    kernel-offset order: exactly the convolution accumulation order.
    """
    m = out_all.shape[0]
    indptr = np.zeros(n + 1, dtype=np.int64)
    for k in range(m):
        indptr[out_all[k] + 1] += 1
    for i in range(n):
        indptr[i + 1] += indptr[i]
    cursor = indptr[:-1].copy()
    nbr_in = np.empty(m, dtype=np.int32)
    nbr_off = np.empty(m, dtype=np.int32)
    for k in range(m):
        i = out_all[k]
        p = cursor[i]
        nbr_in[p] = in_all[k]
        nbr_off[p] = off_all[k]
        cursor[i] = p + 1
    return indptr, nbr_in, nbr_off


@njit(cache=True)
def conv_forward(x, w, b, indptr, nbr_in, nbr_off):
    """out[i] = b + sum over neighbors of x[nbr] @ w[offset]."""
    n = indptr.shape[0] - 1
    cin = w.shape[1]
    cout = w.shape[2]
    out = np.empty((n, cout), dtype=x.dtype)
    acc = np.empty(cout, dtype=x.dtype)
    for i in range(n):
        for co in range(cout):
            acc[co] = b[co]
        for p in range(indptr[i], indptr[i + 1]):
            j = nbr_in[p]
            o = nbr_off[p]
            for ci in range(cin):
                xv = x[j, ci]
                for co in range(cout):
                    acc[co] += xv * w[o, ci, co]
        for co in range(cout):
            out[i, co] = acc[co]
    return out


@njit(cache=True)
def conv_backward(x, d_out, w, indptr, nbr_in, nbr_off, dw, db, dx):
    """Accumulate dw/db and the input gradient dx (all passed in)."""
    n = indptr.shape[0] - 1
    cin = w.shape[1]
    cout = w.shape[2]
    for i in range(n):
        for co in range(cout):
            db[co] += d_out[i, co]
        for p in range(indptr[i], indptr[i + 1]):
            j = nbr_in[p]
            o = nbr_off[p]
            for ci in range(cin):
                xv = x[j, ci]
                s = 0.0
                for co in range(cout):
                    d = d_out[i, co]
                    dw[o, ci, co] += xv * d
                    s += w[o, ci, co] * d
                dx[j, ci] += s


@njit(cache=True)
def _stable_desc_argsort(rem, idx, tmp):
    """idx <- argsort of rem, descending, ties by ascending index (stable merge)."""
    k = rem.shape[0]
    for i in range(k):
        idx[i] = i
    width = 1
    while width < k:
        lo = 0
        while lo < k:
            mid = lo + width
            if mid > k:
                mid = k
            hi = lo + 2 * width
            if hi > k:
                hi = k
            a = lo
            b = mid
            t = lo
            while a < mid and b < hi:
                if rem[idx[a]] >= rem[idx[b]]:
                    tmp[t] = idx[a]
                    a += 1
                else:
                    tmp[t] = idx[b]
                    b += 1
                t += 1
            while a < mid:
                tmp[t] = idx[a]
                a += 1
                t += 1
            while b < hi:
                tmp[t] = idx[b]
                b += 1
                t += 1
            lo = hi
        for i in range(k):
            idx[i] = tmp[i]
        width *= 2


@njit(cache=True)
def quantize_cdf_rows(p, cum):
    """Largest-remainder quantization of probability rows into cum tables.

    Frequencies floor(p*65536) floored at 1; shortfall goes +1 to the
    largest remainders (ties to the lowest symbol), excess comes off the
    single largest frequency.  Returns -1 on success or the first invalid
    row index (NaN/negative/huge rows, or a row sum off by more than 1e-5).
    """
    n, k = p.shape
    freq = np.empty(k, dtype=np.int64)
    rem = np.empty(k, dtype=np.float64)
    idx = np.empty(k, dtype=np.int64)
    tmp = np.empty(k, dtype=np.int64)
    for r in range(n):
        tot = np.int64(0)
        psum = 0.0
        for c in range(k):
            v = np.float64(p[r, c])
            if not np.isfinite(v) or v < 0.0:
                return r
            psum += v
            s = v * 65536.0
            f = np.int64(s)  # floor: s >= 0
            rem[c] = s - f
            if f < 1:
                f = 1
            freq[c] = f
            tot += f
        if abs(psum - 1.0) > 1e-5:
            return r
        give = 65536 - tot
        if give > 0:
            if give > k:
                return r
            _stable_desc_argsort(rem, idx, tmp)
            for t in range(give):
                freq[idx[t]] += 1
        elif give < 0:
            am = 0
            for c in range(1, k):
                if freq[c] > freq[am]:
                    am = c
            freq[am] += give
            if freq[am] < 1:
                return r
        acc = np.int64(0)
        cum[r, 0] = 0
        for c in range(k):
            acc += freq[c]
            cum[r, c + 1] = np.uint32(acc)
    return -1


def warmup() -> None:
    """Force compilation of all float32-path kernels (cached afterwards)."""
    buf = np.zeros(64, dtype=np.uint8)
    lo = np.zeros(2, dtype=np.uint32)
    hi = np.full(2, 32768, dtype=np.uint32)
    pos, low, rng = rc_encode_block(buf, 0, _U64(0), _U64(0xFFFFFFFFFFFFFFFF), lo, hi)
    rc_flush(buf, pos, low)
    cum = np.array([[0, 32768, 65536]], dtype=np.uint32)
    out = np.empty(1, dtype=np.int64)
    rc_decode_block(buf, 0, _U64(0), _U64(0xFFFFFFFFFFFFFFFF), cum, out)
    merge_join(np.arange(4, dtype=np.int64), np.int64(1))
    fnv1a64(buf[:4])
    n = 2
    indptr, nbr_in, nbr_off = csr_from_pairs(
        n, np.zeros(2, np.int64), np.zeros(2, np.int64), np.array([0, 13], np.int64))
    x = np.zeros((n, 3), dtype=np.float32)
    w = np.zeros((27, 3, 3), dtype=np.float32)
    bias = np.zeros(3, dtype=np.float32)
    y = conv_forward(x, w, bias, indptr, nbr_in, nbr_off)
    conv_backward(x, y, w, indptr, nbr_in, nbr_off,
                  np.zeros_like(w), np.zeros_like(bias), np.zeros_like(x))
    pq = np.full((1, 16), 1 / 16, dtype=np.float32)
    cq = np.zeros((1, 17), dtype=np.uint32)
    quantize_cdf_rows(pq, cq)
