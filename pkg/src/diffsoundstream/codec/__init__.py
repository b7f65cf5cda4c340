from .layers import FiLM, ConditionAligner, align_condition
from .losses import MultiScaleStftDiscriminator
from .models import (
    LatentStats,
    SsCl,
    SsClConfig,
    SsSc,
    SsScConfig,
    latent_denormalize,
    latent_normalize,
)
from .train import GanConfig, GanTrainer, TrainingError, gan_train_step
