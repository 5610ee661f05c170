from dataclasses import dataclass
import numpy as np

from ..component import ModelComponent
from ...tensor_core import (
    Parameter,
    Tensor,
    DimensionError,
    matmul,
    row_softmax,
)

import logging

log = logging.getLogger(__name__)


@dataclass
class IALoraConfig:
    """
    Shape of an interaction-aware LoRA layer

    :param int in_dim: input width h_in
    :param int out_dim: output width h_out
    :param int rank: rank r of the shared matrix A
    :param int n_heads: number of heads B_i
    :param float init_std: standard deviation of A and of the router at
        initialization
    """

    in_dim: int
    out_dim: int
    rank: int = 8
    n_heads: int = 3
    init_std: float = 0.02

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError(f"rank must be at least 1, got {self.rank}")
        if self.n_heads < 1:
            raise ValueError(f"n_heads must be at least 1, got {self.n_heads}")
        if self.rank > min(self.in_dim, self.out_dim):
            raise ValueError(
                f"rank {self.rank} exceeds min(in_dim, out_dim) = "
                f"{min(self.in_dim, self.out_dim)}"
            )


class IALoraLinear(ModelComponent):
    """
    Linear layer with a frozen base weight and a routed multi-head low-rank
    bypass.

    For a token row h the layer computes

    .. math::
        h' = W_o h + \\sum_i m_i s_i B_i (A h), \\quad s = softmax(W_r h)

    where A is shared by all heads, every head B_i has its own weights, and m is
    the drop mask (1 active, 0 dropped). There is no alpha / r scaling.

    **Parameters:**

    - W_o: frozen base weight [h_out x h_in]
    - A: shared down projection [r x h_in], Gaussian initialization
    - B: list of n up projections [h_out x r], zero initialization
    - W_r: router [n x h_in], Gaussian initialization

    **State that is not a parameter:**

    - drop_mask: boolean flag per head, forward only
    - tracing / trace_buffer: when tracing is on, every forward appends a copy
      of the route scores [L x n]
    - bypass_enabled: False removes the whole bypass (reference base model)
    """

    def __init__(
        self,
        config: IALoraConfig,
        rng: np.random.Generator,
        base_weight: np.ndarray = None,
        base_std: float = None,
    ):
        """
        Constructor

        :param IALoraConfig config: layer shape
        :param np.random.Generator rng: generator for all random initializations
        :param np.ndarray base_weight: frozen weight [out_dim x in_dim]; drawn
            randomly if None
        :param float base_std: standard deviation of a random base weight
            (default 1/sqrt(in_dim))
        """
        self.config = config
        if base_weight is None:
            if base_std is None:
                base_std = 1.0 / np.sqrt(config.in_dim)
            base_weight = rng.normal(
                0.0, base_std, size=(config.out_dim, config.in_dim)
            )
        base_weight = np.asarray(base_weight, dtype=np.float64)
        if base_weight.shape != (config.out_dim, config.in_dim):
            raise DimensionError(
                f"Base weight has shape {base_weight.shape}, expected "
                f"{(config.out_dim, config.in_dim)}"
            )
        self.W_o = Parameter("W_o", base_weight, frozen=True)
        self.A = Parameter(
            "A", rng.normal(0.0, config.init_std, size=(config.rank, config.in_dim))
        )
        self.B = [
            Parameter(f"B{i}", np.zeros((config.out_dim, config.rank)))
            for i in range(config.n_heads)
        ]
        self.W_r = Parameter(
            "W_r",
            rng.normal(0.0, config.init_std, size=(config.n_heads, config.in_dim)),
        )
        self.drop_mask = np.ones(config.n_heads, dtype=bool)
        self.bypass_enabled = True
        self.tracing = False
        self.trace_buffer = []
        self.layer_id = ""

    @property
    def n_heads(self) -> int:
        return self.config.n_heads

    def __call__(self, H: Tensor) -> Tensor:
        return ia_lora_forward(self, H)

    def set_drop_mask(self, dropped: set):
        """
        Marks the heads in dropped as inactive and all others as active

        :param set dropped: head indices to drop
        """
        dropped = set(int(i) for i in dropped)
        invalid = sorted(i for i in dropped if i < 0 or i >= self.n_heads)
        if invalid:
            raise IndexError(
                f"Head indices {invalid} are out of range for {self.n_heads} heads"
            )
        self.drop_mask = np.array(
            [i not in dropped for i in range(self.n_heads)], dtype=bool
        )

    def reset_drop_mask(self):
        self.drop_mask = np.ones(self.n_heads, dtype=bool)


def _check_input(layer: IALoraLinear, H: Tensor):
    if H.ndim != 2 or H.shape[1] != layer.config.in_dim:
        raise DimensionError(
            f"Layer '{layer.layer_id}' expects [L x {layer.config.in_dim}] input, "
            f"got {H.shape}"
        )


def route(layer: IALoraLinear, H: Tensor) -> Tensor:
    """
    Route scores of every token: S = row_softmax(H W_r^T)

    Dropped heads are not excluded here; the drop mask acts in the forward.

    :param IALoraLinear layer: adapted layer
    :param Tensor H: input [L x h_in]
    :return: scores [L x n], rows on the simplex
    :rtype: Tensor
    """
    _check_input(layer, H)
    return row_softmax(matmul(H, layer.W_r.T))


def ia_lora_forward(layer: IALoraLinear, H: Tensor) -> Tensor:
    """
    H'_t = W_o h_t + sum_i m_i s_{t,i} B_i (A h_t) for every token row h_t

    :param IALoraLinear layer: adapted layer
    :param Tensor H: input [L x h_in]
    :return: output [L x h_out]
    :rtype: Tensor
    """
    _check_input(layer, H)
    out = matmul(H, layer.W_o.T)
    if not layer.bypass_enabled:
        return out

    scores = route(layer, H)
    if layer.tracing:
        layer.trace_buffer.append(scores.values.copy())
    if not layer.drop_mask.any():
        return out

    shared = matmul(H, layer.A.T)
    for i, head in enumerate(layer.B):
        if not layer.drop_mask[i]:
            continue
        out = out + scores[:, i : i + 1] * matmul(shared, head.T)
    return out


def ia_lora_layers(target) -> list:
    """
    Returns the adapted layers of a layer or of a model

    :param target: IALoraLinear or a ModelComponent containing such layers
    :return: list of IALoraLinear
    :rtype: list
    """
    if isinstance(target, IALoraLinear):
        return [target]
    if isinstance(target, ModelComponent):
        return [c for c in target.components() if isinstance(c, IALoraLinear)]
    raise TypeError(f"Cannot find adapted layers in object of type {type(target)}")


def drop_heads(target, indices: set):
    """
    Forces the route weight of the given heads to zero during the forward

    The remaining weights are not renormalized. Parameters are never touched;
    :func:`reset_heads` undoes the drop.

    :param target: IALoraLinear or model
    :param set indices: head indices to drop
    """
    layers = ia_lora_layers(target)
    for layer in layers:
        layer.set_drop_mask(indices)
    if indices:
        log.debug(f"Dropped heads {sorted(indices)} in {len(layers)} layers")


def reset_heads(target):
    """
    Reactivates all heads

    :param target: IALoraLinear or model
    """
    for layer in ia_lora_layers(target):
        layer.reset_drop_mask()


def set_bypass(target, enabled: bool):
    """
    Switches the whole low-rank bypass on or off (off gives the frozen base
    model)

    :param target: IALoraLinear or model
    :param bool enabled: bypass state
    """
    for layer in ia_lora_layers(target):
        layer.bypass_enabled = enabled


def standard_lora_forward(
    H: np.ndarray, W_o: np.ndarray, A: np.ndarray, B: np.ndarray
) -> np.ndarray:
    """
    Plain LoRA reference, H W_o^T + (H A^T) B^T, on arrays

    :param np.ndarray H: input [L x h_in]
    :param np.ndarray W_o: base weight [h_out x h_in]
    :param np.ndarray A: down projection [r x h_in]
    :param np.ndarray B: up projection [h_out x r]
    :return: output [L x h_out]
    :rtype: np.ndarray
    """
    return H @ W_o.T + (H @ A.T) @ B.T
