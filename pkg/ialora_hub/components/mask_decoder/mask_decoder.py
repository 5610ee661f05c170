from dataclasses import dataclass, field
import numpy as np
from scipy.special import expit

from ..component import ModelComponent, Linear
from ...tensor_core import (
    Parameter,
    Tensor,
    concat,
    matmul,
    reshape,
    row_softmax,
    scaled_dot_attention,
)

import logging

log = logging.getLogger(__name__)

GROUP_SIZE = 3
N_SCALES = 2


class DecoderShapeError(ValueError):
    """
    Raised when the inputs of the mask decoder have incompatible shapes
    """


@dataclass
class VisualPyramid:
    """
    Pixel features at two scales, fine resolution twice the coarse one

    :param np.ndarray coarse: [H1 x W1 x D]
    :param np.ndarray fine: [2 H1 x 2 W1 x D]
    """

    coarse: np.ndarray
    fine: np.ndarray

    def __post_init__(self):
        self.coarse = np.asarray(self.coarse, dtype=np.float64)
        self.fine = np.asarray(self.fine, dtype=np.float64)
        if self.coarse.ndim != 3 or self.fine.ndim != 3:
            raise DecoderShapeError(
                f"Pyramid levels must be [H x W x D], got {self.coarse.shape} and "
                f"{self.fine.shape}"
            )
        h1, w1, d1 = self.coarse.shape
        h2, w2, d2 = self.fine.shape
        if d1 != d2 or h2 != 2 * h1 or w2 != 2 * w1:
            raise DecoderShapeError(
                f"Fine level {self.fine.shape} must double the coarse level "
                f"{self.coarse.shape} at equal width"
            )
        if not (np.all(np.isfinite(self.coarse)) and np.all(np.isfinite(self.fine))):
            raise ValueError("Pyramid features contain non-finite entries")

    @classmethod
    def from_fine(cls, fine: np.ndarray):
        """
        Builds the coarse level by 2 x 2 average pooling of the fine level
        """
        fine = np.asarray(fine, dtype=np.float64)
        h, w, d = fine.shape
        if h % 2 or w % 2:
            raise DecoderShapeError(f"Cannot pool a {h} x {w} map by 2")
        coarse = fine.reshape(h // 2, 2, w // 2, 2, d).mean(axis=(1, 3))
        return cls(coarse=coarse, fine=fine)

    @property
    def feature_dim(self) -> int:
        return self.fine.shape[2]

    def level(self, scale: int) -> np.ndarray:
        return (self.coarse, self.fine)[scale]


@dataclass
class MaskOutput:
    """
    Decoder result

    :param list coarse_maps: per channel score map [H1 x W1]
    :param list fine_maps: per channel score map [H2 x W2]
    :param Tensor logits: fused mask logits [C x H2 x W2]
    """

    coarse_maps: list = field(default_factory=list)
    fine_maps: list = field(default_factory=list)
    logits: Tensor = None

    @property
    def n_channels(self) -> int:
        return self.logits.shape[0]

    def probabilities(self) -> np.ndarray:
        """
        Sigmoid of the logits, for binary masks
        """
        return expit(self.logits.values)


class MaskDecoder(ModelComponent):
    """
    Two-scale mask decoder.

    The six mask-token states are aggregated into one prompt per scale. At every
    scale the projected prompt cross-attends over the pixel features and the
    updated prompt, mapped by a channel head, is dotted with every pixel to give
    the score map. The coarse map biases the attention at the fine scale, and
    both maps are fused with softmax-normalized weights.

    **Parameters:**

    - group_weights: 2 x [3], aggregation weights per scale (zero init = mean)
    - prompt_proj: 2 x Linear h -> D
    - heads: 2 x C x Linear D -> D without bias
    - fusion_weights: [2] scale-fusion weights (zero init = average)
    """

    def __init__(
        self,
        hidden_dim: int,
        feature_dim: int,
        n_categories: int,
        rng: np.random.Generator,
    ):
        """
        Constructor

        :param int hidden_dim: width of the mask-token states h
        :param int feature_dim: pixel feature width D
        :param int n_categories: number of output channels C
        :param np.random.Generator rng: generator for the initialization
        """
        if n_categories < 1:
            raise ValueError(f"n_categories must be at least 1, got {n_categories}")
        self.hidden_dim = hidden_dim
        self.feature_dim = feature_dim
        self.n_categories = n_categories
        self.group_weights = [
            Parameter(f"group_weights{s}", np.zeros(GROUP_SIZE))
            for s in range(N_SCALES)
        ]
        self.prompt_proj = [
            Linear(hidden_dim, feature_dim, rng) for _ in range(N_SCALES)
        ]
        self.heads = [
            [
                Linear(feature_dim, feature_dim, rng, bias=False)
                for _ in range(n_categories)
            ]
            for _ in range(N_SCALES)
        ]
        self.fusion_weights = Parameter("fusion_weights", np.zeros(N_SCALES))


def aggregate_group(hidden: Tensor, w: Tensor) -> Tensor:
    """
    softmax(w)-weighted sum of the three states of a mask-token group

    :param Tensor hidden: states [3 x h]
    :param Tensor w: weights [3]
    :return: prompt [1 x h]
    :rtype: Tensor
    """
    if not isinstance(hidden, Tensor):
        hidden = Tensor(np.asarray(hidden, dtype=np.float64))
    if not isinstance(w, Tensor):
        w = Tensor(w)
    if hidden.ndim != 2 or hidden.shape[0] != GROUP_SIZE:
        raise DecoderShapeError(
            f"A mask-token group holds {GROUP_SIZE} states, got shape {hidden.shape}"
        )
    if w.size != GROUP_SIZE:
        raise DecoderShapeError(
            f"Aggregation needs {GROUP_SIZE} weights, got shape {w.shape}"
        )
    weights = row_softmax(reshape(w, (1, GROUP_SIZE)))
    return matmul(weights, hidden)


def decode_scale(
    prompt: Tensor,
    feats: np.ndarray,
    prompt_proj: Linear,
    head: Linear,
    attn_bias: Tensor = None,
) -> Tensor:
    """
    Score map of one scale

    q = prompt_proj(prompt) attends over the flattened pixels (attn_bias added
    to the attention logits), u = q + attended, and the logit of pixel f is
    f . head(u).

    :param Tensor prompt: prompt [1 x h] (or [h])
    :param np.ndarray feats: pixel features [Hs x Ws x D]
    :param Linear prompt_proj: h -> D map
    :param Linear head: D -> D channel head
    :param Tensor attn_bias: optional bias [Hs x Ws]
    :return: score map [Hs x Ws]
    :rtype: Tensor
    """
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 3:
        raise DecoderShapeError(
            f"Pixel features must be [H x W x D], got {feats.shape}"
        )
    height, width, depth = feats.shape
    if prompt.ndim == 1:
        prompt = reshape(prompt, (1, prompt.shape[0]))
    pixels = Tensor(feats.reshape(height * width, depth))

    q = prompt_proj(prompt)
    if q.shape != (1, depth):
        raise DecoderShapeError(
            f"Projected prompt has shape {q.shape}, pixels have width {depth}"
        )
    bias = None
    if attn_bias is not None:
        if not isinstance(attn_bias, Tensor):
            attn_bias = Tensor(attn_bias)
        if attn_bias.shape != (height, width):
            raise DecoderShapeError(
                f"Attention bias shape {attn_bias.shape} does not match the "
                f"{height} x {width} grid"
            )
        bias = reshape(attn_bias, (1, height * width))
    updated = q + scaled_dot_attention(q, pixels, pixels, bias=bias)
    logits = matmul(pixels, head(updated).T)
    return reshape(logits, (height, width))


def _interpolation_matrix(n_out: int, n_in: int) -> np.ndarray:
    # Bilinear weights with aligned corners
    matrix = np.zeros((n_out, n_in))
    if n_in == 1 or n_out == 1:
        matrix[:, 0] = 1.0
        return matrix
    for i in range(n_out):
        src = i * (n_in - 1) / (n_out - 1)
        lo = min(int(np.floor(src)), n_in - 2)
        frac = src - lo
        matrix[i, lo] = 1.0 - frac
        matrix[i, lo + 1] = frac
    return matrix


def upsample_bilinear(prev_map: Tensor, next_shape: tuple) -> Tensor:
    """
    Bilinear upsampling by integer factors, corners aligned

    :param Tensor prev_map: map [H1 x W1]
    :param tuple next_shape: (H2, W2), integer multiples of (H1, W1)
    :return: map [H2 x W2]
    :rtype: Tensor
    """
    if not isinstance(prev_map, Tensor):
        prev_map = Tensor(prev_map)
    if prev_map.ndim != 2:
        raise DecoderShapeError(f"Score maps are 2-D, got {prev_map.shape}")
    (h1, w1), (h2, w2) = prev_map.shape, tuple(next_shape)
    if h2 < h1 or w2 < w1 or h2 % h1 or w2 % w1:
        raise DecoderShapeError(
            f"Cannot upsample {prev_map.shape} to {tuple(next_shape)}: the scale "
            f"factor must be a positive integer"
        )
    if (h1, w1) == (h2, w2):
        return prev_map
    rows = Tensor(_interpolation_matrix(h2, h1))
    cols = Tensor(_interpolation_matrix(w2, w1))
    return matmul(matmul(rows, prev_map), cols.T)


def propagate_bias(prev_map: Tensor, next_shape: tuple) -> Tensor:
    """
    Attention-logit bias of the next scale: the upsampled previous score map

    :param Tensor prev_map: score map [H1 x W1]
    :param tuple next_shape: (H2, W2)
    :return: bias [H2 x W2]
    :rtype: Tensor
    """
    return upsample_bilinear(prev_map, next_shape)


def combine_scales(maps: tuple, u: Tensor) -> Tensor:
    """
    Fuses the coarse and the fine score maps with softmax(u) weights, after
    upsampling the coarse map

    :param tuple maps: (coarse [H1 x W1], fine [H2 x W2])
    :param Tensor u: fusion weights [2]
    :return: fused logits [H2 x W2]
    :rtype: Tensor
    """
    if len(maps) != N_SCALES:
        raise DecoderShapeError(f"Expected {N_SCALES} score maps, got {len(maps)}")
    coarse, fine = maps
    if not isinstance(u, Tensor):
        u = Tensor(u)
    if u.size != N_SCALES:
        raise DecoderShapeError(f"Fusion needs {N_SCALES} weights, got {u.shape}")
    weights = row_softmax(reshape(u, (1, N_SCALES)))
    upsampled = upsample_bilinear(coarse, fine.shape)
    return weights[:, 0:1] * upsampled + weights[:, 1:2] * fine


def predict_mask(
    decoder: MaskDecoder, groups: tuple, pyramid: VisualPyramid, C: int = None
) -> MaskOutput:
    """
    Coarse decode, bias propagation, fine decode and fusion, for every channel

    :param MaskDecoder decoder: decoder parameters
    :param tuple groups: two [3 x h] mask-token groups, coarse first
    :param VisualPyramid pyramid: pixel features
    :param int C: number of channels (defaults to the decoder's categories)
    :return: score maps and logits [C x H2 x W2]
    :rtype: MaskOutput
    """
    if C is None:
        C = decoder.n_categories
    if C < 1 or C > decoder.n_categories:
        raise DecoderShapeError(
            f"C = {C} channels requested, decoder has {decoder.n_categories} heads"
        )
    if len(groups) != N_SCALES:
        raise DecoderShapeError(
            f"Expected {N_SCALES} token groups, got {len(groups)}"
        )
    if pyramid.feature_dim != decoder.feature_dim:
        raise DecoderShapeError(
            f"Pyramid width {pyramid.feature_dim} does not match decoder width "
            f"{decoder.feature_dim}"
        )

    prompts = [
        aggregate_group(groups[s], decoder.group_weights[s]) for s in range(N_SCALES)
    ]
    output = MaskOutput()
    fused = []
    for c in range(C):
        coarse = decode_scale(
            prompts[0],
            pyramid.coarse,
            prompt_proj=decoder.prompt_proj[0],
            head=decoder.heads[0][c],
        )
        bias = propagate_bias(coarse, pyramid.fine.shape[:2])
        fine = decode_scale(
            prompts[1],
            pyramid.fine,
            attn_bias=bias,
            prompt_proj=decoder.prompt_proj[1],
            head=decoder.heads[1][c],
        )
        output.coarse_maps.append(coarse)
        output.fine_maps.append(fine)
        channel = combine_scales((coarse, fine), decoder.fusion_weights)
        fused.append(reshape(channel, (1,) + channel.shape))
    output.logits = concat(fused, axis=0)
    return output
