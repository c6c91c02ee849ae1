"""Stage-timing benchmark: encode+decode in both coding modes.

Reports per-stage wall times (pyramid / nn / ae) for the fastest of
`repeat` timed runs after one untimed warmup, plus the bitrates, and
verifies the round trip on every run.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .codec import decode_with_summary, encode_with_summary
from .errors import CorruptStreamError
from .model import TopModel
from .voxel import quantize


def _one_run(geom, transform, model, one_stage, n_points):
    blob, summary = encode_with_summary(geom, transform, model,
                                        one_stage=one_stage, points=n_points)
    back, _t, dec_ms = decode_with_summary(blob, model)
    if back != geom:
        raise CorruptStreamError("benchmark round trip mismatch")
    return summary, dec_ms


def run_bench(points, depth: int, model: TopModel, repeat: int = 3) -> dict:
    points = np.asarray(points, dtype=np.float64)
    _kernels.warmup()
    geom, transform = quantize(points, depth)
    report = {
        "points": len(points),
        "voxels": len(geom),
        "depth": depth,
        "repeat": repeat,
    }
    for mode in ("two_stage", "one_stage"):
        one = mode == "one_stage"
        _one_run(geom, transform, model, one, len(points))  # warmup
        best = None
        for _ in range(max(repeat, 1)):
            summary, dec_ms = _one_run(geom, transform, model, one, len(points))
            enc_ms = summary.wall_ms
            total = sum(enc_ms.values()) + sum(dec_ms.values())
            if best is None or total < best["total_ms"]:
                best = {
                    "bpp": summary.bpp,
                    "bytes": summary.bytes,
                    "encode_ms": {k: round(v, 3) for k, v in enc_ms.items()},
                    "decode_ms": {k: round(v, 3) for k, v in dec_ms.items()},
                    "ae_ms": round(enc_ms["ae"] + dec_ms["ae"], 3),
                    "total_ms": round(total, 3),
                }
        report[mode] = best
    two, one = report["two_stage"], report["one_stage"]
    report["two_stage_ae_faster"] = two["ae_ms"] <= one["ae_ms"]
    report["bpp_rel_gap"] = abs(two["bpp"] - one["bpp"]) / one["bpp"]
    return report
