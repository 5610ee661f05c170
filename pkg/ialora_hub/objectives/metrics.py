from dataclasses import dataclass, field
import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment

import logging

log = logging.getLogger(__name__)

AUC_THRESHOLDS = tuple(round(0.05 * k, 2) for k in range(1, 20))


class MetricInputError(ValueError):
    """
    Raised when a metric receives inputs it is not defined for
    """


@dataclass
class EvalResult:
    """
    Metrics of an evaluation, per task family

    :param dict metrics: family -> {metric name: value}
    :param dict counts: family -> number of evaluated samples
    """

    metrics: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metrics": {
                family: {k: float(v) for k, v in values.items()}
                for family, values in self.metrics.items()
            },
            "counts": {family: int(n) for family, n in self.counts.items()},
        }

    @classmethod
    def from_dict(cls, data: dict):
        return cls(metrics=data["metrics"], counts=data["counts"])

    def to_frame(self) -> pd.DataFrame:
        """
        Long table with columns family, metric, value, count
        """
        rows = [
            {
                "family": family,
                "metric": name,
                "value": float(value),
                "count": int(self.counts.get(family, 0)),
            }
            for family, values in self.metrics.items()
            for name, value in values.items()
        ]
        return pd.DataFrame(rows, columns=["family", "metric", "value", "count"])


def _same(a, b) -> bool:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return np.array_equal(np.asarray(a), np.asarray(b))
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return list(a) == list(b)
    return a == b


def accuracy(preds: list, gts: list) -> float:
    """
    Fraction of exact matches

    :param list preds: predictions (any comparable objects, e.g. token lists)
    :param list gts: ground truths
    :return: accuracy in [0, 1]
    :rtype: float
    """
    if len(preds) != len(gts):
        raise MetricInputError(f"{len(preds)} predictions for {len(gts)} ground truths")
    if not gts:
        raise MetricInputError("Accuracy of an empty set is undefined")
    return float(np.mean([_same(p, g) for p, g in zip(preds, gts)]))


def _f1(tp: int, fp: int, fn: int) -> float:
    if tp + fp + fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def event_spans(timeline: list) -> dict:
    """
    Contiguous spans of every event in a per-segment timeline

    :param list timeline: one set of event labels per segment
    :return: event -> list of (start, end), segment indices inclusive
    :rtype: dict
    """
    spans = {}
    for t, events in enumerate(timeline):
        for event in events:
            runs = spans.setdefault(event, [])
            if runs and runs[-1][1] == t - 1:
                runs[-1] = (runs[-1][0], t)
            else:
                runs.append((t, t))
    return spans


def temporal_iou(a: tuple, b: tuple) -> float:
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]) + 1)
    union = (a[1] - a[0] + 1) + (b[1] - b[0] + 1) - inter
    return inter / union


def segment_event_f1(pred: list, gt: list, tiou_threshold: float = 0.5) -> tuple:
    """
    Segment-level and event-level F1 of a predicted timeline

    Segment level: micro F1 over (segment, event) pairs. Event level: spans of
    the same event are matched one to one at temporal IoU >= tiou_threshold
    (maximum matching), then F1 over spans.

    :param list pred: one set of events per segment
    :param list gt: one set of events per segment
    :param float tiou_threshold: matching threshold
    :return: (segment F1, event F1)
    :rtype: tuple
    """
    if len(pred) != len(gt):
        raise MetricInputError(
            f"Timelines differ in length: {len(pred)} and {len(gt)} segments"
        )
    if not gt:
        raise MetricInputError("Empty timeline")

    tp = fp = fn = 0
    for p, g in zip(pred, gt):
        p, g = set(p), set(g)
        tp += len(p & g)
        fp += len(p - g)
        fn += len(g - p)
    segment_f1 = _f1(tp, fp, fn)

    pred_spans, gt_spans = event_spans(pred), event_spans(gt)
    tp = fp = fn = 0
    for event in set(pred_spans) | set(gt_spans):
        ps, gs = pred_spans.get(event, []), gt_spans.get(event, [])
        matched = 0
        if ps and gs:
            hits = np.array(
                [[temporal_iou(a, b) >= tiou_threshold for b in gs] for a in ps],
                dtype=np.float64,
            )
            rows, cols = linear_sum_assignment(hits, maximize=True)
            matched = int(hits[rows, cols].sum())
        tp += matched
        fp += len(ps) - matched
        fn += len(gs) - matched
    return segment_f1, _f1(tp, fp, fn)


def box_iou(a, b) -> float:
    """
    IoU of two pixel-inclusive boxes [x_L, y_T, x_R, y_B]
    """
    inter_w = min(a[2], b[2]) - max(a[0], b[0]) + 1
    inter_h = min(a[3], b[3]) - max(a[1], b[1]) + 1
    inter = max(0, inter_w) * max(0, inter_h)
    area_a = (a[2] - a[0] + 1) * (a[3] - a[1] + 1)
    area_b = (b[2] - b[0] + 1) * (b[3] - b[1] + 1)
    return inter / float(area_a + area_b - inter)


def _valid_box(box) -> bool:
    return (
        box is not None
        and len(box) == 4
        and box[0] <= box[2]
        and box[1] <= box[3]
    )


def box_ciou_auc(
    preds: list,
    gts: list,
    success_threshold: float = 0.5,
    thresholds: tuple = AUC_THRESHOLDS,
) -> tuple:
    """
    Localization success rate at success_threshold (cIoU) and its mean over a
    threshold sweep (AUC)

    Boxes are pixel-inclusive [x_L, y_T, x_R, y_B]. A missing or malformed
    prediction scores IoU 0.

    :param list preds: predicted boxes (None allowed)
    :param list gts: ground-truth boxes
    :param float success_threshold: IoU needed for a success
    :param tuple thresholds: IoU thresholds of the sweep
    :return: (cIoU, AUC)
    :rtype: tuple
    """
    if len(preds) != len(gts):
        raise MetricInputError(f"{len(preds)} predictions for {len(gts)} boxes")
    if not gts:
        raise MetricInputError("Box metrics of an empty set are undefined")
    for g in gts:
        if not _valid_box(g):
            raise MetricInputError(f"Degenerate ground-truth box {g}")
    ious = np.array(
        [box_iou(p, g) if _valid_box(p) else 0.0 for p, g in zip(preds, gts)]
    )
    ciou = float(np.mean(ious >= success_threshold))
    auc = float(np.mean([np.mean(ious >= t) for t in thresholds]))
    return ciou, auc


def _binarize(probs, gts, threshold: float) -> tuple:
    probs = np.asarray(probs, dtype=np.float64)
    gts = np.asarray(gts).astype(bool)
    if probs.shape != gts.shape:
        raise MetricInputError(
            f"Prediction shape {probs.shape} does not match ground truth {gts.shape}"
        )
    if probs.ndim == 2:
        probs, gts = probs[None], gts[None]
    return probs >= threshold, gts


def miou_fscore(
    pred_probs, gt_masks, threshold: float = 0.5, beta2: float = 0.3
) -> tuple:
    """
    Mean IoU and mean F_beta of binarized masks

    Masks are binarized as p >= threshold. A sample with empty prediction and
    empty ground truth scores 1 on both measures.

    :param pred_probs: probabilities [N x H x W] (or one [H x W] mask)
    :param gt_masks: binary masks of the same shape
    :param float threshold: binarization threshold
    :param float beta2: beta squared of the F measure
    :return: (mIoU, F)
    :rtype: tuple
    """
    preds, gts = _binarize(pred_probs, gt_masks, threshold)
    if preds.shape[0] == 0:
        raise MetricInputError("Mask metrics of an empty set are undefined")
    ious, fscores = [], []
    for p, g in zip(preds, gts):
        inter = np.logical_and(p, g).sum()
        union = np.logical_or(p, g).sum()
        if union == 0:
            ious.append(1.0)
            fscores.append(1.0)
            continue
        ious.append(inter / union)
        precision = inter / p.sum() if p.sum() else 0.0
        recall = inter / g.sum() if g.sum() else 0.0
        denom = beta2 * precision + recall
        fscores.append((1 + beta2) * precision * recall / denom if denom else 0.0)
    return float(np.mean(ious)), float(np.mean(fscores))


def semantic_miou(pred_labels, gt_labels, n_classes: int) -> float:
    """
    Class-averaged IoU of label maps, averaged over samples

    Classes absent from both maps of a sample are skipped for that sample.

    :param pred_labels: predicted class ids [N x H x W] (or [H x W])
    :param gt_labels: true class ids, same shape
    :param int n_classes: number of classes
    :return: mIoU
    :rtype: float
    """
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    if pred_labels.shape != gt_labels.shape:
        raise MetricInputError(
            f"Label map shapes {pred_labels.shape} and {gt_labels.shape} differ"
        )
    if pred_labels.ndim == 2:
        pred_labels, gt_labels = pred_labels[None], gt_labels[None]
    if pred_labels.shape[0] == 0:
        raise MetricInputError("Mask metrics of an empty set are undefined")
    scores = []
    for p, g in zip(pred_labels, gt_labels):
        per_class = []
        for c in range(n_classes):
            union = np.logical_or(p == c, g == c).sum()
            if union:
                per_class.append(np.logical_and(p == c, g == c).sum() / union)
        scores.append(np.mean(per_class))
    return float(np.mean(scores))
