from .losses import (
    LossWeights,
    UndefinedLossError,
    l_txt,
    l_bce,
    l_dice,
    l_ce_semantic,
    combine_losses,
)
from .metrics import (
    EvalResult,
    MetricInputError,
    AUC_THRESHOLDS,
    accuracy,
    segment_event_f1,
    event_spans,
    temporal_iou,
    box_iou,
    box_ciou_auc,
    miou_fscore,
    semantic_miou,
)
