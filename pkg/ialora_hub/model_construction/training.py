import numpy as np

from .unified_model import UnifiedModel
from ..objectives import LossWeights
from ..tensor_core import AdamW, recording, cosine_warmup_lr

import logging

log = logging.getLogger(__name__)


class TrainingDivergenceError(RuntimeError):
    """
    Raised when the training loss becomes non-finite
    """


def sample_batch(
    rng: np.random.Generator, pools: dict, proportions: dict, batch_size: int
) -> list:
    """
    Random combination of samples from several task families

    Every slot of the batch draws its family with the given proportions, then a
    sample of that family uniformly.

    :param np.random.Generator rng: batch generator
    :param dict pools: family -> samples
    :param dict proportions: family -> share of the batches
    :param int batch_size: samples per batch
    :return: samples
    :rtype: list
    """
    families = [f for f in proportions if proportions[f] > 0 and pools.get(f)]
    if not families:
        raise ValueError("No task family with samples and a positive proportion")
    shares = np.array([proportions[f] for f in families], dtype=np.float64)
    shares = shares / shares.sum()
    picks = rng.choice(len(families), size=batch_size, p=shares)
    batch = []
    for pick in picks:
        pool = pools[families[pick]]
        batch.append(pool[int(rng.integers(len(pool)))])
    return batch


def train_step(
    model: UnifiedModel,
    optimizer: AdamW,
    batch: list,
    lr: float,
    weights: LossWeights = None,
) -> dict:
    """
    One optimizer step on the mean loss of a batch

    Every sample runs its own tape; the gradients of the samples accumulate on
    the parameters before the update.

    :param UnifiedModel model: model to train
    :param AdamW optimizer: optimizer over the model parameters
    :param list batch: training samples
    :param float lr: learning rate of the step
    :param LossWeights weights: loss weights
    :return: mean loss and mean loss components of the batch
    :rtype: dict
    """
    optimizer.zero_grad()
    scale = 1.0 / len(batch)
    totals = {}
    for sample in batch:
        with recording() as tape:
            L, parts = model.loss(sample, weights)
            scaled = L * scale
        value = L.item()
        if not np.isfinite(value):
            raise TrainingDivergenceError(
                f"Non-finite loss {value} on a '{sample.family}' sample "
                f"(components {parts})"
            )
        tape.backward(scaled)
        parts["loss"] = value
        for key, part in parts.items():
            totals[key] = totals.get(key, 0.0) + part * scale
    optimizer.step(lr)
    return totals


def run_training(
    model: UnifiedModel,
    pools: dict,
    proportions: dict,
    steps: int,
    batch_size: int,
    base_lr: float,
    warmup_ratio: float,
    weight_decay: float,
    seed: int,
    weights: LossWeights = None,
    log_every: int = 50,
) -> list:
    """
    Warmup-cosine AdamW training on mixed-family batches

    :param UnifiedModel model: model to train
    :param dict pools: family -> training samples
    :param dict proportions: family -> share of the batches
    :param int steps: optimizer steps
    :param int batch_size: samples per step
    :param float base_lr: peak learning rate
    :param float warmup_ratio: share of the steps used for the linear ramp
    :param float weight_decay: decoupled weight decay
    :param int seed: seed of the batch sampling
    :param LossWeights weights: loss weights
    :param int log_every: logging interval in steps
    :return: loss curve, one dict per step
    :rtype: list
    """
    rng = np.random.default_rng(seed)
    optimizer = AdamW(model.trainable_parameters(), weight_decay=weight_decay)
    curve = []
    for step in range(1, steps + 1):
        # The schedule ends one step after the last update, so no update runs
        # at rate 0
        lr = cosine_warmup_lr(step, steps + 1, base_lr, warmup_ratio)
        batch = sample_batch(rng, pools, proportions, batch_size)
        record = train_step(model, optimizer, batch, lr, weights)
        record["step"] = step
        record["lr"] = lr
        curve.append(record)
        if step % log_every == 0 or step == steps:
            log.info(f"Step {step}/{steps}: loss {record['loss']:.4f}, lr {lr:.2e}")
    return curve
