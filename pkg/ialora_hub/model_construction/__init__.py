from .unified_model import (
    ModelConfig,
    UnifiedModel,
    Prediction,
    extract_final_answer,
    mask_probabilities,
)
from .training import (
    TrainingDivergenceError,
    sample_batch,
    train_step,
    run_training,
)
