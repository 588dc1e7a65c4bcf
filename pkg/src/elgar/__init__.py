"""Audio-conditioned cello performance motion generation.

Data normalization, forward kinematics, performer-instrument contact
losses, diffusion training and sampling, and string-performance metrics,
at desk scale with fully deterministic behavior.
"""

from .cello import CelloSpec, ContactIntent, default_cello, load_cello
from .conditions import ConditionTrack
from .denoiser import DenoiserConfig, DenoiserParams, denoiser_forward
from .diffusion import GuidanceConfig, NoiseSchedule, cosine_schedule, ddim_sample, q_sample
from .losses import LossBreakdown, LossWeights, loss_total
from .metrics import EvaluationReport, evaluate
from .motion import MotionSequence, bow_endpoints
from .skeleton import Skeleton, default_skeleton, forward_kinematics, load_skeleton
from .synth import Note, SynthResult, synth_performance

__version__ = "0.1.0"

__all__ = [
    "CelloSpec",
    "ConditionTrack",
    "ContactIntent",
    "DenoiserConfig",
    "DenoiserParams",
    "EvaluationReport",
    "GuidanceConfig",
    "LossBreakdown",
    "LossWeights",
    "MotionSequence",
    "NoiseSchedule",
    "Note",
    "Skeleton",
    "SynthResult",
    "bow_endpoints",
    "cosine_schedule",
    "ddim_sample",
    "default_cello",
    "default_skeleton",
    "denoiser_forward",
    "evaluate",
    "forward_kinematics",
    "load_cello",
    "load_skeleton",
    "loss_total",
    "q_sample",
    "synth_performance",
    "__version__",
]
