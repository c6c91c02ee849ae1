"""socc: lossless multiscale sparse-occupancy-code codec for 3D point clouds."""

__version__ = "0.1.0"

from .voxel import (  # noqa: F401
    QuantizationTransform,
    SparseGeometry,
    canonical_order,
    dequantize,
    quantize,
)
from .occupancy import (  # noqa: F401
    Pyramid,
    ScaleLayer,
    build_pyramid,
    fcg,
    fog,
    octant_of,
    reconstruct_pyramid,
)
