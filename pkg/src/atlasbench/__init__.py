"""atlasbench: synthetic BEV driving scenes, a QA text protocol, 3D-token
query machinery, a toy autoregressive planner, and open-loop planning metrics.
"""

__version__ = "0.1.0"

from .bev_space import BevPoint, BinSpec, KINEMATIC_BINS, SPATIAL_BINS

__all__ = [
    "BevPoint",
    "BinSpec",
    "SPATIAL_BINS",
    "KINEMATIC_BINS",
    "__version__",
]
