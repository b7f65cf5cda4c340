"""Semantic-conditioned speech tokenization with a latent diffusion decoder."""

from .audio import Waveform
from .sched import Schedule
from .tokens import AcousticTokenSeq, ConditioningSpec, SemanticTokenSeq

__version__ = "0.1.0"
