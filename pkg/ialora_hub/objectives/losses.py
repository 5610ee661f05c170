from dataclasses import dataclass, asdict
import numpy as np

from ..tensor_core import (
    Tensor,
    DimensionError,
    log_softmax,
    mean,
    reshape,
    softplus,
    sum,
    transpose,
)


class UndefinedLossError(ValueError):
    """
    Raised when a loss has no term to average over
    """


@dataclass
class LossWeights:
    """
    Weights of the training objective

    L_seg = bce * l_bce + dice * l_dice + ce * l_ce and L = txt * l_txt +
    seg * L_seg
    """

    txt: float = 1.0
    seg: float = 0.5
    bce: float = 1.0
    dice: float = 0.5
    ce: float = 1.0

    def __post_init__(self):
        negative = {k: v for k, v in asdict(self).items() if v < 0}
        if negative:
            raise ValueError(f"Loss weights must be nonnegative, got {negative}")

    @classmethod
    def from_dict(cls, weights: dict):
        return cls(**{k: float(v) for k, v in weights.items()})


def l_txt(logits: Tensor, targets, ignore_id: int = -1) -> Tensor:
    """
    Mean token cross entropy over the positions whose target is not ignore_id

    :param Tensor logits: [L x |V|]
    :param targets: target ids [L]
    :param int ignore_id: id of positions without a target
    :return: scalar loss
    :rtype: Tensor
    """
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != targets.size:
        raise DimensionError(
            f"{targets.size} targets for logits of shape {logits.shape}"
        )
    rows = np.flatnonzero(targets != ignore_id)
    if rows.size == 0:
        raise UndefinedLossError(
            "Every position is ignored, the text loss is undefined"
        )
    cols = targets[rows]
    if cols.min() < 0 or cols.max() >= logits.shape[1]:
        raise ValueError(
            f"Target ids {sorted(set(cols.tolist()))} outside vocabulary of size "
            f"{logits.shape[1]}"
        )
    return -mean(log_softmax(logits)[rows, cols])


def _binary_target(pred: Tensor, target) -> np.ndarray:
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.shape:
        raise DimensionError(
            f"Prediction shape {pred.shape} does not match target shape {target.shape}"
        )
    if not np.all((target == 0.0) | (target == 1.0)):
        raise ValueError("Mask targets must be binary (0 or 1)")
    return target


def l_bce(pred_logits: Tensor, target) -> Tensor:
    """
    Mean binary cross entropy on logits, softplus(x) - x t

    :param Tensor pred_logits: mask logits
    :param target: binary map of the same shape
    :return: scalar loss
    :rtype: Tensor
    """
    target = _binary_target(pred_logits, target)
    return mean(softplus(pred_logits) - pred_logits * target)


def l_dice(pred_probs: Tensor, target, eps: float = 1.0) -> Tensor:
    """
    Dice loss 1 - (2 sum(p t) + eps) / (sum(p) + sum(t) + eps)

    :param Tensor pred_probs: probabilities
    :param target: binary map of the same shape
    :param float eps: smoothing
    :return: scalar loss in [0, 1]
    :rtype: Tensor
    """
    target = _binary_target(pred_probs, target)
    overlap = sum(pred_probs * target) * 2.0 + eps
    total = sum(pred_probs) + (float(target.sum()) + eps)
    return 1.0 - overlap / total


def l_ce_semantic(pred_logits: Tensor, labels) -> Tensor:
    """
    Mean pixelwise cross entropy of class logits

    :param Tensor pred_logits: [C x H x W]
    :param labels: class ids [H x W]
    :return: scalar loss
    :rtype: Tensor
    """
    labels = np.asarray(labels)
    if pred_logits.ndim != 3 or labels.shape != pred_logits.shape[1:]:
        raise DimensionError(
            f"Labels of shape {labels.shape} do not fit logits {pred_logits.shape}"
        )
    n_classes = pred_logits.shape[0]
    flat = labels.reshape(-1).astype(np.int64)
    if flat.min() < 0 or flat.max() >= n_classes:
        raise ValueError(
            f"Labels {sorted(set(flat.tolist()))} out of range for {n_classes} classes"
        )
    per_pixel = transpose(reshape(pred_logits, (n_classes, flat.size)))
    return -mean(log_softmax(per_pixel)[np.arange(flat.size), flat])


def combine_losses(
    l_txt=None, l_bce=None, l_dice=None, l_ce=None, weights: LossWeights = None
) -> tuple:
    """
    Weighted composition of the loss terms; absent terms count as 0

    :param l_txt: text loss (Tensor, float or None)
    :param l_bce: binary cross entropy (Tensor, float or None)
    :param l_dice: dice loss (Tensor, float or None)
    :param l_ce: semantic cross entropy (Tensor, float or None)
    :param LossWeights weights: weights (defaults when None)
    :return: (L_seg, L)
    :rtype: tuple
    """
    if weights is None:
        weights = LossWeights()
    elif isinstance(weights, dict):
        weights = LossWeights.from_dict(weights)

    def weighted(terms):
        total = 0.0
        for term, w in terms:
            if term is not None:
                total = total + term * w
        return total

    L_seg = weighted([(l_bce, weights.bce), (l_dice, weights.dice), (l_ce, weights.ce)])
    L = weighted([(l_txt, weights.txt), (L_seg, weights.seg)])
    return L_seg, L
