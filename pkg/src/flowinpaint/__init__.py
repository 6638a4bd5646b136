"""Flow-guided video inpainting with a diffusion denoiser, at desk scale.

A numpy autodiff core, DDIM noise schedule, video denoiser with a flow
completion branch and multi-scale flow adapter, an accelerated sampler
(latent interpolation plus flow-attention caching), synthetic data with
exact optical flow, metrics, benchmarks and a command line.
"""

from .denoiser import DenoiserInput, VideoDenoiser
from .flow import FlowPair, backward_warp, complete_flow, estimate_corrupted_flow
from .sampler import Sampler, SamplerConfig, sample
from .schedule import NoiseSchedule
from .trainer import TrainConfig, Trainer

__all__ = [
    "DenoiserInput", "FlowPair", "NoiseSchedule", "Sampler", "SamplerConfig", "TrainConfig", "Trainer",
    "VideoDenoiser", "backward_warp", "complete_flow", "estimate_corrupted_flow", "sample",
]
__version__ = "0.1.0"
