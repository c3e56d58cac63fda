from .checkpoint import load as load_checkpoint
from .checkpoint import load_model
from .checkpoint import save as save_checkpoint
from .model import (
    CHAR_MAX_LEN,
    CharRecognizer,
    ConvRecognizer,
    backward_step,
    char_decode,
    char_forward,
    forward,
    to_input,
)
from .training import (
    CurriculumConfig,
    EpochLog,
    EpochPlan,
    Sample,
    TrainConfig,
    curriculum_schedule,
    curriculum_train,
    evaluate,
    filter_by_feature_map,
    filter_dataset,
    flat_schedule,
    load_dataset,
    read_trace,
    train_char,
    train_with_schedule,
    write_trace,
)
