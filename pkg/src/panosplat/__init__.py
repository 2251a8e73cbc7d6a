"""panosplat: panoramic RGBD in, navigable composed 3D-Gaussian-splat scene out.

Geometry, depth alignment, a deterministic CPU splat rasterizer with
analytic gradients, photometric optimization, disocclusion inpainting
orchestration, and object-level scene composition. All generative models
sit behind mockable HTTP ports, so the whole pipeline runs offline.
"""

__version__ = "0.1.0"

from .cloud import Sim3Transform, SplatCloud  # noqa: F401
from .images import DepthMap, EquirectImage, PixelMask  # noqa: F401
