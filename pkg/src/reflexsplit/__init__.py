"""Dual-stream single-image reflection separation."""

from .config import ModelConfig, RunConfig, load_run_config
from .curriculum import CurriculumState, lambda_effective, lambda_init, lambda_warmup
from .model import ReflexSplitNet, SeparationOutput
from .synth import BlendCoefficients, TrainingTriplet, screen_blend

__version__ = "0.1.0"
