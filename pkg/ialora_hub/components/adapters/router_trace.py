from dataclasses import dataclass, field
import numpy as np

from ...tensor_core import ContractError
from .ia_lora import ia_lora_layers

import logging

log = logging.getLogger(__name__)

AGGREGATIONS = ("flat", "layer_mean")


@dataclass
class TraceRecord:
    """
    Route scores [L x n] of one layer for one traced sample
    """

    layer_id: str
    sample_index: int
    scores: np.ndarray


@dataclass
class RouterTrace:
    """
    Raw route scores of a traced batch and their aggregated profiles

    :param str task_tag: family the batch belongs to
    :param int n_heads: number of heads n
    :param list records: one :class:`TraceRecord` per layer and sample
    :param np.ndarray profile: mean of all recorded rows, on the n-simplex
    :param np.ndarray sample_profiles: one profile per sample [N x n]
    """

    task_tag: str
    n_heads: int
    records: list = field(default_factory=list)
    profile: np.ndarray = None
    sample_profiles: np.ndarray = None

    def rows(self) -> np.ndarray:
        """
        All recorded score rows stacked [R x n]
        """
        if not self.records:
            return np.zeros((0, self.n_heads))
        return np.concatenate([r.scores for r in self.records], axis=0)

    def layer_ids(self) -> list:
        seen = []
        for r in self.records:
            if r.layer_id not in seen:
                seen.append(r.layer_id)
        return seen

    def aggregate(self, aggregation: str = "flat") -> np.ndarray:
        """
        Recomputes the task profile from the raw records

        - flat: mean over all rows of all layers and samples
        - layer_mean: mean over layers of the per-layer mean rows

        :param str aggregation: flat or layer_mean
        :return: profile [n]
        :rtype: np.ndarray
        """
        return _aggregate(self.records, self.n_heads, aggregation)

    def aggregate_samples(self, aggregation: str = "flat") -> np.ndarray:
        """
        Profile of every sample, in sample order [N x n]
        """
        indices = sorted(set(r.sample_index for r in self.records))
        return np.array(
            [
                _aggregate(
                    [r for r in self.records if r.sample_index == i],
                    self.n_heads,
                    aggregation,
                )
                for i in indices
            ]
        ).reshape(len(indices), self.n_heads)

    def to_records(self) -> list:
        """
        Flattens the trace into JSON-ready dicts, one per token row

        Layout: ``{task_tag, layer_id, sample_index, token_index, scores}``
        """
        out = []
        for r in self.records:
            for t, row in enumerate(r.scores):
                out.append(
                    {
                        "task_tag": self.task_tag,
                        "layer_id": r.layer_id,
                        "sample_index": int(r.sample_index),
                        "token_index": int(t),
                        "scores": [float(s) for s in row],
                    }
                )
        return out

    @classmethod
    def from_records(cls, records: list, aggregation: str = "flat"):
        """
        Rebuilds the traces of a dumped record list, one trace per task tag

        :param list records: dicts as written by :func:`to_records`
        :param str aggregation: flat or layer_mean
        :return: dict task_tag -> RouterTrace
        :rtype: dict
        """
        grouped = {}
        for rec in records:
            tag = rec["task_tag"]
            key = (rec["layer_id"], int(rec["sample_index"]))
            grouped.setdefault(tag, {}).setdefault(key, []).append(
                (int(rec["token_index"]), rec["scores"])
            )

        traces = {}
        for tag, rows in grouped.items():
            trace_records = []
            for (layer_id, sample_index), tokens in rows.items():
                tokens = sorted(tokens, key=lambda x: x[0])
                scores = np.array([s for _, s in tokens], dtype=np.float64)
                trace_records.append(TraceRecord(layer_id, sample_index, scores))
            n_heads = trace_records[0].scores.shape[1]
            traces[tag] = _finalize(tag, n_heads, trace_records, aggregation)
        return traces


def _aggregate(records: list, n_heads: int, aggregation: str) -> np.ndarray:
    if aggregation not in AGGREGATIONS:
        raise ValueError(
            f"Unknown aggregation '{aggregation}', choose one of {AGGREGATIONS}"
        )
    if not records:
        raise ValueError("Cannot aggregate an empty trace")
    if aggregation == "flat":
        return np.concatenate([r.scores for r in records], axis=0).mean(axis=0)

    per_layer = {}
    for r in records:
        per_layer.setdefault(r.layer_id, []).append(r.scores)
    return np.mean(
        [np.concatenate(rows, axis=0).mean(axis=0) for rows in per_layer.values()],
        axis=0,
    )


def _finalize(
    task_tag: str, n_heads: int, records: list, aggregation: str
) -> RouterTrace:
    trace = RouterTrace(task_tag=task_tag, n_heads=n_heads, records=records)
    trace.profile = trace.aggregate(aggregation)
    trace.sample_profiles = trace.aggregate_samples(aggregation)
    return trace


def enable_tracing(model, enabled: bool = True):
    """
    Switches route-score recording on or off and empties all trace buffers

    :param model: model containing IALoraLinear layers
    :param bool enabled: tracing state
    """
    for layer in ia_lora_layers(model):
        layer.tracing = enabled
        layer.trace_buffer = []


def collect_trace(
    model, batch: list, task_tag: str, aggregation: str = "flat"
) -> RouterTrace:
    """
    Forwards every item of batch once and collects the route scores of all
    adapted layers

    The model must expose ``trace_forward(item)``, which runs exactly one
    forward through every adapted layer. Tracing must have been enabled with
    :func:`enable_tracing`.

    :param model: model with tracing enabled
    :param list batch: items accepted by model.trace_forward
    :param str task_tag: tag of the batch
    :param str aggregation: flat (default) or layer_mean
    :return: trace of the batch
    :rtype: RouterTrace
    """
    layers = ia_lora_layers(model)
    if not layers or not all(layer.tracing for layer in layers):
        raise ContractError(
            f"Tracing is disabled; enable it before collecting the '{task_tag}' trace"
        )
    if not batch:
        raise ValueError(f"Cannot trace an empty batch for '{task_tag}'")

    for layer in layers:
        layer.trace_buffer = []
    for item in batch:
        model.trace_forward(item)

    records = []
    for layer in layers:
        if len(layer.trace_buffer) != len(batch):
            raise ContractError(
                f"Layer '{layer.layer_id}' recorded {len(layer.trace_buffer)} "
                f"forwards for a batch of {len(batch)}"
            )
        for i, scores in enumerate(layer.trace_buffer):
            records.append(TraceRecord(layer.layer_id, i, scores))
        layer.trace_buffer = []

    trace = _finalize(task_tag, layers[0].n_heads, records, aggregation)
    log.debug(f"Collected trace '{task_tag}': profile {np.round(trace.profile, 4)}")
    return trace
