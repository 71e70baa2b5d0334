from config.config import *
from config.interfaces import *
from config.sections import (
    DataConfig,
    DiffusionConfig,
    EmbeddingConfig,
    GuidanceConfig,
    InferConfig,
    LossConfig,
    ModelConfig,
    RunConfig,
    ScheduleConfig,
    TrainingConfig,
    build_config,
    load_config,
    parse_overrides,
)
