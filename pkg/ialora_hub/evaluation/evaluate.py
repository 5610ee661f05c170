import numpy as np

from ..components.language_model import TASK_FAMILIES
from ..objectives import (
    EvalResult,
    MetricInputError,
    accuracy,
    segment_event_f1,
    box_ciou_auc,
    miou_fscore,
    semantic_miou,
)

import logging

log = logging.getLogger(__name__)

PRIMARY_METRIC = {
    "temporal": "accuracy",
    "spatial": "auc",
    "reasoning": "accuracy",
    "segmentation": "miou",
}


def answer_number(answer: list, vocab):
    """
    Value of a single number-token answer, None for anything else
    """
    if len(answer) != 1:
        return None
    return vocab.value_of(answer[0])


def answer_box(answer: list, vocab):
    """
    Box [x_L, y_T, x_R, y_B] of a four number-token answer, None otherwise
    """
    if len(answer) != 4:
        return None
    values = [vocab.value_of(t) for t in answer]
    if any(v is None for v in values):
        return None
    return values


def _timeline(timestep, n_frames: int) -> list:
    return [{"event"} if t == timestep else set() for t in range(n_frames)]


def temporal_metrics(samples: list, predictions: list, vocab) -> dict:
    """
    Accuracy of the predicted marker timestep, plus segment- and event-level F1
    of the one-event timeline, averaged over samples
    """
    answers = [p.answer for p in predictions]
    metrics = {"accuracy": accuracy(answers, [s.answer for s in samples])}
    segment_scores, event_scores = [], []
    for sample, answer in zip(samples, answers):
        n_frames = sample.features.n_frames
        pred = _timeline(answer_number(answer, vocab), n_frames)
        gt = _timeline(sample.gt["timestep"], n_frames)
        segment, event = segment_event_f1(pred, gt)
        segment_scores.append(segment)
        event_scores.append(event)
    metrics["segment_f1"] = float(np.mean(segment_scores))
    metrics["event_f1"] = float(np.mean(event_scores))
    return metrics


def spatial_metrics(samples: list, predictions: list, vocab) -> dict:
    answers = [p.answer for p in predictions]
    boxes = [answer_box(a, vocab) for a in answers]
    ciou, auc = box_ciou_auc(boxes, [s.gt["bbox"] for s in samples])
    return {
        "accuracy": accuracy(answers, [s.answer for s in samples]),
        "ciou": ciou,
        "auc": auc,
    }


def reasoning_metrics(samples: list, predictions: list, vocab) -> dict:
    answers = [p.answer for p in predictions]
    return {"accuracy": accuracy(answers, [s.answer for s in samples])}


def segmentation_metrics(samples: list, predictions: list, vocab) -> dict:
    """
    Mask metrics; binary masks use channel 0 probabilities, semantic masks the
    channel argmax
    """
    answers = [p.answer for p in predictions]
    metrics = {"accuracy": accuracy(answers, [s.answer for s in samples])}
    masks = [p.mask for p in predictions]
    if any(m is None for m in masks):
        raise MetricInputError("Segmentation predictions must carry a mask")
    if "labels" in samples[0].gt:
        n_classes = masks[0].shape[0]
        metrics["miou"] = semantic_miou(
            np.array([m.argmax(axis=0) for m in masks]),
            np.array([s.gt["labels"] for s in samples]),
            n_classes,
        )
    else:
        miou, fscore = miou_fscore(
            np.array([m[0] for m in masks]), np.array([s.gt["mask"] for s in samples])
        )
        metrics["miou"] = miou
        metrics["fscore"] = fscore
    return metrics


FAMILY_METRICS = {
    "temporal": temporal_metrics,
    "spatial": spatial_metrics,
    "reasoning": reasoning_metrics,
    "segmentation": segmentation_metrics,
}


def evaluate(model, suite: list) -> EvalResult:
    """
    Decodes every sample and applies the metrics of its family

    The model must provide ``predict(sample)`` returning an object with
    ``answer`` (final answer ids) and ``mask`` (probabilities or None), and a
    ``vocab``.

    :param model: model to evaluate
    :param list suite: evaluation samples
    :return: metrics per family
    :rtype: EvalResult
    """
    if not suite:
        raise MetricInputError("Cannot evaluate an empty suite")
    grouped = {}
    for sample in suite:
        grouped.setdefault(sample.family, []).append(sample)

    result = EvalResult()
    for family in TASK_FAMILIES:
        samples = grouped.get(family)
        if not samples:
            continue
        predictions = [model.predict(s) for s in samples]
        result.metrics[family] = FAMILY_METRICS[family](
            samples, predictions, model.vocab
        )
        result.counts[family] = len(samples)
    return result


def primary_metrics(result: EvalResult) -> dict:
    """
    The headline metric of every evaluated family
    """
    return {
        family: result.metrics[family][PRIMARY_METRIC[family]]
        for family in result.metrics
    }
