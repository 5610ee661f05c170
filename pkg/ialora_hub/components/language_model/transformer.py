import numpy as np

from ..component import ModelComponent
from ..adapters import IALoraConfig, IALoraLinear
from .vocabulary import Vocabulary
from ...tensor_core import (
    Parameter,
    Tensor,
    DimensionError,
    concat,
    gelu,
    layer_norm,
    scaled_dot_attention,
    causal_bias,
)

import logging

log = logging.getLogger(__name__)


class MaskTokenExtractionError(ValueError):
    """
    Raised when a generated sequence does not contain every mask token exactly
    once
    """


def sinusoidal_positions(length: int, width: int) -> np.ndarray:
    """
    Fixed sinusoidal position table [length x width]
    """
    positions = np.arange(length, dtype=np.float64)[:, None]
    rates = 1.0 / np.power(10000.0, (2 * (np.arange(width) // 2)) / width)
    angles = positions * rates[None, :]
    table = np.zeros((length, width))
    table[:, 0::2] = np.sin(angles[:, 0::2])
    table[:, 1::2] = np.cos(angles[:, 1::2])
    return table


class TransformerBlock(ModelComponent):
    """
    Pre-norm decoder block: single-head causal self-attention and a GELU MLP
    (h -> 2h -> h). Every linear map is an adapted layer with a frozen base.
    """

    def __init__(
        self,
        hidden_dim: int,
        rank: int,
        n_heads: int,
        rng: np.random.Generator,
        init_std: float = 0.02,
    ):
        def adapted(in_dim, out_dim):
            return IALoraLinear(
                IALoraConfig(in_dim, out_dim, rank, n_heads, init_std), rng
            )

        self.attn_q = adapted(hidden_dim, hidden_dim)
        self.attn_k = adapted(hidden_dim, hidden_dim)
        self.attn_v = adapted(hidden_dim, hidden_dim)
        self.attn_o = adapted(hidden_dim, hidden_dim)
        self.mlp_in = adapted(hidden_dim, 2 * hidden_dim)
        self.mlp_out = adapted(2 * hidden_dim, hidden_dim)

    def __call__(self, x: Tensor) -> Tensor:
        a = layer_norm(x)
        bias = causal_bias(x.shape[0])
        attended = scaled_dot_attention(
            self.attn_q(a), self.attn_k(a), self.attn_v(a), bias=bias
        )
        x = x + self.attn_o(attended)
        m = layer_norm(x)
        return x + self.mlp_out(gelu(self.mlp_in(m)))


class ToyTransformerLM(ModelComponent):
    """
    Small decoder-only language model standing in for a pretrained LLM.

    The embedding table and every base weight are random and frozen; the
    adapters (A, B_i, W_r) of all linear layers, including the output
    projection, are the only trainable parameters of the model.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        hidden_dim: int = 32,
        n_blocks: int = 2,
        rank: int = 8,
        n_heads: int = 3,
        rng: np.random.Generator = None,
        init_std: float = 0.02,
    ):
        """
        Constructor

        :param Vocabulary vocab: symbol table
        :param int hidden_dim: model width h
        :param int n_blocks: number of decoder blocks D (0 allowed)
        :param int rank: adapter rank r
        :param int n_heads: adapter heads n
        :param np.random.Generator rng: generator for all initializations
        :param float init_std: standard deviation of A and W_r
        """
        if rng is None:
            rng = np.random.default_rng(0)
        if n_blocks < 0:
            raise ValueError(f"n_blocks must be nonnegative, got {n_blocks}")
        self._vocab = vocab
        self.hidden_dim = hidden_dim
        self.embedding = Parameter(
            "embedding",
            rng.normal(0.0, 1.0, size=(len(vocab), hidden_dim)),
            frozen=True,
        )
        self.blocks = [
            TransformerBlock(hidden_dim, rank, n_heads, rng, init_std)
            for _ in range(n_blocks)
        ]
        self.output = IALoraLinear(
            IALoraConfig(hidden_dim, len(vocab), rank, n_heads, init_std), rng
        )
        for name, component in self._named_adapters():
            component.layer_id = name

    @property
    def vocab(self) -> Vocabulary:
        return self._vocab

    def _named_adapters(self) -> list:
        named = []
        for b, block in enumerate(self.blocks):
            for attr, value in vars(block).items():
                if isinstance(value, IALoraLinear):
                    named.append((f"blocks.{b}.{attr}", value))
        named.append(("output", self.output))
        return named

    def embed(self, token_ids) -> Tensor:
        """
        Frozen embedding rows of token_ids [len x h]
        """
        token_ids = np.asarray(token_ids, dtype=np.int64).reshape(-1)
        out_of_range = token_ids.size and (
            token_ids.min() < 0 or token_ids.max() >= len(self._vocab)
        )
        if out_of_range:
            raise DimensionError(
                f"Token ids {token_ids.tolist()} outside vocabulary of size "
                f"{len(self._vocab)}"
            )
        return Tensor(self.embedding.values[token_ids].reshape(-1, self.hidden_dim))

    def trace_forward(self, H_0: Tensor):
        return forward_lm(self, H_0)


def forward_lm(model: ToyTransformerLM, H_0: Tensor, target_ids=None) -> tuple:
    """
    Causal forward over the prompt states and, if given, the embedded target
    tokens

    The returned hidden states are the normalized last-layer states that feed
    the output projection. Row len(H_0) + j of the hidden states belongs to
    target token j; logits row len(H_0) - 1 + j predicts it.

    :param ToyTransformerLM model: language model
    :param Tensor H_0: prompt states [L_0 x h]
    :param target_ids: optional token ids appended after the prompt
    :return: logits [L x |V|] and hidden states [L x h]
    :rtype: tuple
    """
    if not isinstance(H_0, Tensor):
        H_0 = Tensor(H_0)
    if H_0.ndim != 2 or H_0.shape[1] != model.hidden_dim:
        raise DimensionError(
            f"Prompt states must be [L x {model.hidden_dim}], got {H_0.shape}"
        )
    x = H_0
    if target_ids is not None and len(target_ids) > 0:
        x = concat([H_0, model.embed(target_ids)], axis=0)
    if x.shape[0] < 1:
        raise DimensionError("forward_lm needs at least one position")

    x = x + Tensor(sinusoidal_positions(x.shape[0], model.hidden_dim))
    for block in model.blocks:
        x = block(x)
    hidden = layer_norm(x)
    return model.output(hidden), hidden


def greedy_decode(
    model: ToyTransformerLM, prompt_states: Tensor, max_len: int, eos_id: int = None
) -> list:
    """
    Argmax decoding without a cache: the full sequence is re-run every step

    Ties go to the lowest token id. Decoding stops after EOS (included in the
    result) or after max_len tokens.

    :param ToyTransformerLM model: language model
    :param Tensor prompt_states: H_0 [L_0 x h]
    :param int max_len: maximum number of generated tokens
    :param int eos_id: end token (defaults to the vocabulary's EOS)
    :return: generated token ids
    :rtype: list
    """
    if max_len < 1:
        raise ValueError(f"max_len must be at least 1, got {max_len}")
    if eos_id is None:
        eos_id = model.vocab.eos
    generated = []
    while len(generated) < max_len:
        logits, _ = forward_lm(model, prompt_states, generated)
        next_id = int(np.argmax(logits.values[-1]))
        generated.append(next_id)
        if next_id == eos_id:
            break
    return generated


def decode_with_states(
    model: ToyTransformerLM, prompt_states: Tensor, max_len: int
) -> tuple:
    """
    Greedy decode followed by one forward over the generated tokens

    :return: generated ids and the hidden states of the generated positions
        [len(ids) x h]
    :rtype: tuple
    """
    generated = greedy_decode(model, prompt_states, max_len)
    _, hidden = forward_lm(model, prompt_states, generated)
    offset = prompt_states.shape[0]
    return generated, hidden[offset:]


def extract_mask_embeddings(
    hidden_states: Tensor, generated_ids, vocab: Vocabulary
) -> tuple:
    """
    Picks the hidden state of every mask token, grouped by token id

    :param Tensor hidden_states: states aligned with generated_ids [len x h]
    :param generated_ids: token ids
    :param Vocabulary vocab: symbol table defining the mask tokens
    :return: two [3 x h] tensors, coarse group then fine group
    :rtype: tuple
    """
    ids = [int(t) for t in generated_ids]
    if hidden_states.shape[0] != len(ids):
        raise DimensionError(
            f"{hidden_states.shape[0]} hidden states for {len(ids)} generated ids"
        )
    missing = [m for m in vocab.mask_ids if ids.count(m) == 0]
    duplicated = [m for m in vocab.mask_ids if ids.count(m) > 1]
    if missing or duplicated:
        raise MaskTokenExtractionError(
            f"Mask tokens must appear exactly once: missing ids {missing}, "
            f"duplicated ids {duplicated}"
        )
    groups = []
    for group in vocab.mask_groups:
        positions = np.array([ids.index(m) for m in group])
        groups.append(hidden_states[positions])
    return tuple(groups)
