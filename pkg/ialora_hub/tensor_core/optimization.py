import math
import numpy as np

from .tensor import Parameter

import logging

log = logging.getLogger(__name__)


def cosine_warmup_lr(
    step: int, total_steps: int, base_lr: float = 1e-4, warmup_ratio: float = 0.03
) -> float:
    """
    Learning rate with a linear warmup followed by a cosine decay

    The rate ramps linearly from 0 to base_lr over ceil(warmup_ratio *
    total_steps) steps and then decays along a half cosine to 0 at total_steps.
    If the warmup covers all steps, the rate stays at base_lr after the ramp.

    :param int step: current step (0 <= step <= total_steps)
    :param int total_steps: number of steps of the schedule
    :param float base_lr: peak learning rate
    :param float warmup_ratio: fraction of the steps used for warmup
    :return: learning rate at step
    :rtype: float
    """
    if total_steps < 1:
        raise ValueError(f"total_steps must be at least 1, got {total_steps}")
    if step < 0 or step > total_steps:
        raise ValueError(f"step {step} is outside of [0, {total_steps}]")

    warmup_steps = math.ceil(warmup_ratio * total_steps)
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    decay_steps = total_steps - warmup_steps
    if decay_steps == 0:
        return base_lr
    progress = (step - warmup_steps) / decay_steps
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def adamw_step(
    params: list,
    grads: list,
    state: dict,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> dict:
    """
    One AdamW update with decoupled weight decay

    The moment estimates live in state, keyed by parameter identity. Frozen
    parameters and parameters without gradient are skipped entirely.

    :param list params: parameters to update (in place)
    :param list grads: gradients, one per parameter (None allowed)
    :param dict state: optimizer state {"step": int, "m": {}, "v": {}}
    :param float lr: learning rate
    :param float beta1: decay of the first moment
    :param float beta2: decay of the second moment
    :param float eps: denominator offset
    :param float weight_decay: decoupled weight decay factor
    :return: the updated state
    :rtype: dict
    """
    if len(params) != len(grads):
        raise ValueError(
            f"adamw_step got {len(params)} parameters but {len(grads)} gradients"
        )
    state.setdefault("step", 0)
    state.setdefault("m", {})
    state.setdefault("v", {})
    state["step"] += 1
    t = state["step"]
    bias_correction1 = 1.0 - beta1**t
    bias_correction2 = 1.0 - beta2**t

    for param, grad in zip(params, grads):
        if grad is None or (isinstance(param, Parameter) and param.frozen):
            continue
        key = id(param)
        m = state["m"].get(key)
        v = state["v"].get(key)
        if m is None:
            m = np.zeros_like(param.values)
            v = np.zeros_like(param.values)
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad**2
        state["m"][key] = m
        state["v"][key] = v

        m_hat = m / bias_correction1
        v_hat = v / bias_correction2
        if weight_decay:
            param.values = param.values - lr * weight_decay * param.values
        param.values = param.values - lr * m_hat / (np.sqrt(v_hat) + eps)

    return state


class AdamW:
    """
    Stateful wrapper around :func:`adamw_step`

    :param list params: parameters handled by the optimizer (frozen ones are
        ignored during updates)
    """

    def __init__(
        self,
        params: list,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        """
        Constructor
        """
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = {"step": 0, "m": {}, "v": {}}

    def step(self, lr: float):
        """
        Applies one update using the gradients stored on the parameters

        :param float lr: learning rate of this step
        """
        adamw_step(
            self.params,
            [p.grad for p in self.params],
            self.state,
            lr,
            self.beta1,
            self.beta2,
            self.eps,
            self.weight_decay,
        )

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
