"""Distortion metrics: symmetric chamfer distance and point-to-point PSNR.

Nearest neighbors are exact (k-d tree); metrics gate the acceptance tests,
so no approximate search is used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInputError, InvalidInputError
from .voxel import as_point_array

PSNR_CAP_DB = 120.0


@dataclass
class DistortionReport:
    d1_psnr_db: float
    chamfer: float
    mse_ab: float
    mse_ba: float

    def to_dict(self) -> dict:
        return {
            "d1_psnr_db": self.d1_psnr_db,
            "chamfer": self.chamfer,
            "mse_ab": self.mse_ab,
            "mse_ba": self.mse_ba,
        }


def _nn_dists(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    d, _ = cKDTree(dst).query(src, k=1)
    return d


def chamfer(a, b) -> float:
    """(1/2n) sum |x - NN(x, b)| + (1/2m) sum |x - NN(x, a)|, Euclidean."""
    a = as_point_array(a)
    b = as_point_array(b)
    if len(a) == 0 or len(b) == 0:
        raise EmptyInputError("chamfer needs two non-empty clouds")
    return float(0.5 * _nn_dists(a, b).mean() + 0.5 * _nn_dists(b, a).mean())


def d1_psnr(a, b, peak: float) -> float:
    """Point-to-point PSNR with symmetric max-MSE and a 3*peak^2 numerator."""
    return _d1(a, b, peak)[0]


def _d1(a, b, peak: float):
    a = as_point_array(a)
    b = as_point_array(b)
    if len(a) == 0 or len(b) == 0:
        raise EmptyInputError("d1_psnr needs two non-empty clouds")
    if not peak > 0:
        raise InvalidInputError("peak must be positive")
    mse_ab = float((_nn_dists(a, b) ** 2).mean())
    mse_ba = float((_nn_dists(b, a) ** 2).mean())
    mse = max(mse_ab, mse_ba)
    if mse == 0.0:
        return PSNR_CAP_DB, mse_ab, mse_ba
    return min(10.0 * np.log10(3.0 * peak * peak / mse), PSNR_CAP_DB), mse_ab, mse_ba


def distortion_report(a, b, peak: float) -> DistortionReport:
    psnr, mse_ab, mse_ba = _d1(a, b, peak)
    return DistortionReport(
        d1_psnr_db=psnr, chamfer=chamfer(a, b), mse_ab=mse_ab, mse_ba=mse_ba)
