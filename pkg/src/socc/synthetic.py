"""Deterministic synthetic spinning-LiDAR scans for desk-scale experiments.

A simulated sensor sits above the origin and sweeps rings of rays (one
elevation per ring, a full azimuth revolution per ring).  Scenes are
analytic surfaces: a ground plane, the plane plus a few boxes, or a
spherical shell.  The box scene keeps the occluded ground hit as a second
return, so its point set strictly contains the bare-plane scan of the same
config; range noise is Gaussian.  Identical configs generate identical
clouds bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

SCENES = ("plane", "plane_with_boxes", "sphere")

_SENSOR_HEIGHT = 1.5
_SPHERE_RADIUS = 20.0
_NUM_BOXES = 5


@dataclass(frozen=True)
class ScanConfig:
    seed: int = 0
    rings: int = 32
    points_per_ring: int = 512
    scene: str = "plane"
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.rings < 1 or self.points_per_ring < 1:
            raise InvalidInputError("rings and points_per_ring must be >= 1")
        if self.scene not in SCENES:
            raise InvalidInputError(f"unknown scene {self.scene!r}, expected one of {SCENES}")
        if self.noise_sigma < 0:
            raise InvalidInputError("noise_sigma must be >= 0")


def _ray_grid(config: ScanConfig):
    elev = np.deg2rad(np.linspace(-25.0, -3.0, config.rings))
    azim = np.linspace(0.0, 2 * np.pi, config.points_per_ring, endpoint=False)
    e = np.repeat(elev, config.points_per_ring)
    a = np.tile(azim, config.rings)
    ce = np.cos(e)
    return np.stack([np.cos(a) * ce, np.sin(a) * ce, np.sin(e)], axis=1)


def _sample_boxes(rng: np.random.Generator) -> np.ndarray:
    """(K, 2, 3) axis-aligned boxes resting on the ground plane."""
    boxes = np.empty((_NUM_BOXES, 2, 3))
    for k in range(_NUM_BOXES):
        radius = rng.uniform(4.0, 14.0)
        angle = rng.uniform(0.0, 2 * np.pi)
        cx, cy = radius * np.cos(angle), radius * np.sin(angle)
        hx, hy = rng.uniform(0.4, 1.2, size=2)
        height = rng.uniform(0.8, 2.5)
        boxes[k, 0] = (cx - hx, cy - hy, 0.0)
        boxes[k, 1] = (cx + hx, cy + hy, height)
    return boxes


def _intersect_boxes(origin: np.ndarray, dirs: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """Nearest positive hit distance per ray (inf where no box is hit)."""
    best = np.full(len(dirs), np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        for bmin, bmax in boxes:
            t1 = (bmin - origin) * inv
            t2 = (bmax - origin) * inv
            near = np.nanmax(np.minimum(t1, t2), axis=1)
            far = np.nanmin(np.maximum(t1, t2), axis=1)
            hit = (near <= far) & (near > 1e-9)
            best = np.where(hit & (near < best), near, best)
    return best


def gen_scan(config: ScanConfig) -> np.ndarray:
    """Generate one scan as an (N, 3) float64 point array."""
    rng = np.random.default_rng(np.uint64(config.seed))
    origin = np.array([0.0, 0.0, _SENSOR_HEIGHT])
    dirs = _ray_grid(config)

    if config.scene == "sphere":
        dist = np.full(len(dirs), _SPHERE_RADIUS)
        extra = np.empty((0, 3))
    else:
        dist = origin[2] / -dirs[:, 2]  # ground hit; all rings point downward
        if config.scene == "plane_with_boxes":
            boxes = _sample_boxes(rng)
            t_box = _intersect_boxes(origin, dirs, boxes)
            occluded = t_box < dist
            # first return on the box face, occluded ground kept as second return
            extra_t = t_box[occluded]
            if config.noise_sigma > 0:
                extra_t = extra_t + rng.normal(0.0, config.noise_sigma, extra_t.shape)
            extra = origin + extra_t[:, None] * dirs[occluded]
        else:
            extra = np.empty((0, 3))

    if config.noise_sigma > 0:
        dist = dist + rng.normal(0.0, config.noise_sigma, dist.shape)
    points = origin + dist[:, None] * dirs
    if len(extra):
        points = np.concatenate([points, extra], axis=0)
    return points
