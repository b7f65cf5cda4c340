from .artifacts import STAGES, MissingPrerequisite, Run, SpecMismatch
from .config import RunConfig, load_config, profile
from .stages import Corpus, read_metrics, train_stage
