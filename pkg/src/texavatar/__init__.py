"""texavatar: deterministic CPU pipeline for texture-space Gaussian avatars.

Builds an animatable avatar from multi-view images of a skinned template:
textures are unprojected twice (before and after fitting a coarse deformation
map), one Gaussian is attached per covered texel, and frames are rendered with
a tile-based software splatter. Everything runs single-threaded on the CPU and
is bit-reproducible.
"""

__version__ = "0.1.0"

from .scene import (  # noqa: F401
    Camera,
    CameraRig,
    Joint,
    MotionFrame,
    PointCloud,
    SkinnedTemplate,
    TexelMap,
)
