"""Detection-free coarse-to-fine 2D-3D registration on synthetic desk scenes."""

from .config import Config, load_config
from .errors import XRegError
from .geometry import CameraIntrinsics, DepthMap, PointCloud, RigidTransform
from .matching import coarse_match, fine_match, mutual_topk
from .registration import RansacConfig, epnp, pnp_ransac

__version__ = "0.1.0"

__all__ = [
    "Config", "load_config", "XRegError", "CameraIntrinsics", "DepthMap", "PointCloud", "RigidTransform",
    "coarse_match", "fine_match", "mutual_topk", "RansacConfig", "epnp", "pnp_ransac",
]
