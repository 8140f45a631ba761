"""difftween: real-image interpolation with pretrained latent diffusion backends."""

__version__ = "0.1.0"

from .diffusion import (
    AffineTransform,
    Latent,
    NoiseSchedule,
    ddim_denoise,
    forward_diffuse,
    forward_diffuse_step,
    lerp,
    make_schedule,
    slerp,
    warp_latent,
)
from .tree import FrameNode, GenerationConfig, InterpolationTree, build_tree, frame_schedule

__all__ = [
    "AffineTransform",
    "Latent",
    "NoiseSchedule",
    "ddim_denoise",
    "forward_diffuse",
    "forward_diffuse_step",
    "lerp",
    "make_schedule",
    "slerp",
    "warp_latent",
    "FrameNode",
    "GenerationConfig",
    "InterpolationTree",
    "build_tree",
    "frame_schedule",
    "__version__",
]
