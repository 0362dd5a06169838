"""ddit: a toy diffusion transformer that re-tokenizes its latent at a
different patch size on every denoising step.

The patch size is chosen by a training-free scheduler from third-order
finite differences of the recent latent trajectory; enlarged patch sizes
run through pseudo-inverse-initialized embedders and a LoRA-adapted
pathway distilled from the frozen base model.
"""

from .dynamics import (
    TrajectoryWindow,
    first_difference,
    nth_difference,
    per_patch_std,
    percentile,
)
from .errors import (
    DditError,
    NumericError,
    TraceFormatError,
    ValidationError,
    WeightFormatError,
)
from .model import (
    DynamicPatchModel,
    FlopEstimate,
    ModelConfig,
    build_model,
    count_flops,
)
from .sampler import NoiseSchedule, SampleReport, compare_to_baseline, ddim_step, sample
from .scheduler import ScheduleDecision, SchedulerConfig, ScheduleTrace, decide, replay
from .serialization import load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "TrajectoryWindow", "first_difference", "nth_difference", "per_patch_std",
    "percentile", "DditError", "NumericError", "TraceFormatError",
    "ValidationError", "WeightFormatError", "DynamicPatchModel", "FlopEstimate",
    "ModelConfig", "build_model", "count_flops", "NoiseSchedule", "SampleReport",
    "compare_to_baseline", "ddim_step", "sample", "ScheduleDecision",
    "SchedulerConfig", "ScheduleTrace", "decide", "replay", "load_weights",
    "save_weights", "__version__",
]
