import numpy as np

from ..component import ModelComponent, Linear
from ...tensor_core import (
    Parameter,
    Tensor,
    DimensionError,
    concat,
    gelu,
    scaled_dot_attention,
)


class QueryCompressor(ModelComponent):
    """
    Compresses a variable number of feature rows into K tokens of width h.

    K learnable queries cross-attend to the projected features (keys and values
    are both F P), the attended rows pass a two-layer MLP.

    **Parameters:**

    - queries [K x h]
    - feature_proj: D -> h
    - mlp_in, mlp_out: h -> h, GELU in between
    """

    def __init__(
        self,
        feature_dim: int,
        hidden_dim: int,
        n_queries: int,
        rng: np.random.Generator,
        init_std: float = 0.02,
    ):
        """
        Constructor

        :param int feature_dim: feature width D
        :param int hidden_dim: model width h
        :param int n_queries: number of output tokens K
        :param np.random.Generator rng: generator for the initialization
        :param float init_std: standard deviation of the queries
        """
        if n_queries < 1:
            raise ValueError(f"A compressor needs at least one query, got {n_queries}")
        self.feature_dim = feature_dim
        self.hidden_dim = hidden_dim
        self.n_queries = n_queries
        self.queries = Parameter(
            "queries", rng.normal(0.0, init_std, size=(n_queries, hidden_dim))
        )
        self.feature_proj = Linear(feature_dim, hidden_dim, rng)
        self.mlp_in = Linear(hidden_dim, hidden_dim, rng)
        self.mlp_out = Linear(hidden_dim, hidden_dim, rng)

    def __call__(self, feats: Tensor) -> Tensor:
        return compress(feats, self)


def compress(feats: Tensor, comp: QueryCompressor) -> Tensor:
    """
    Cross-attention of the learnable queries over the feature rows, followed by
    the two-layer MLP

    :param Tensor feats: features [L x D]
    :param QueryCompressor comp: compressor
    :return: compressed tokens [K x h]
    :rtype: Tensor
    """
    if not isinstance(feats, Tensor):
        feats = Tensor(feats)
    if feats.ndim != 2 or feats.shape[1] != comp.feature_dim or feats.shape[0] < 1:
        raise DimensionError(
            f"Compressor expects [L x {comp.feature_dim}] features with L >= 1, "
            f"got {feats.shape}"
        )
    keys = comp.feature_proj(feats)
    attended = scaled_dot_attention(comp.queries, keys, keys)
    return comp.mlp_out(gelu(comp.mlp_in(attended)))


def compress_frames(frames, comp: QueryCompressor) -> Tensor:
    """
    Compresses every frame of a [T x L x D] feature array separately and
    concatenates the tokens in frame order

    :param frames: features [T x L x D]
    :param QueryCompressor comp: compressor
    :return: tokens [T*K x h]
    :rtype: Tensor
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[0] < 1:
        raise DimensionError(f"Expected [T x L x D] frame features, got {frames.shape}")
    if not np.all(np.isfinite(frames)):
        raise ValueError("Modality features contain non-finite entries")
    return concat([compress(Tensor(f), comp) for f in frames], axis=0)


def assemble_input(H_v: Tensor, H_a: Tensor, H_t: Tensor) -> Tensor:
    """
    Concatenates visual, audio and text tokens along the token axis

    H_0 = [H_v; H_a; H_t], with length T*K_v + T*K_a + L_t. The text part may be
    empty (zero rows).

    :param Tensor H_v: visual tokens [T*K_v x h]
    :param Tensor H_a: audio tokens [T*K_a x h]
    :param Tensor H_t: text tokens [L_t x h]
    :return: H_0
    :rtype: Tensor
    """
    parts = [p if isinstance(p, Tensor) else Tensor(p) for p in (H_v, H_a, H_t)]
    widths = [p.shape[1] if p.ndim == 2 else None for p in parts]
    if None in widths or len(set(widths)) != 1:
        raise DimensionError(
            f"Segments must share the hidden width, got shapes "
            f"{[p.shape for p in parts]}"
        )
    return concat(parts, axis=0)
