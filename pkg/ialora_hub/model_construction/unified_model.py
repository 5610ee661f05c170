from dataclasses import dataclass
import numpy as np
from scipy.special import expit, softmax

from ..components.component import ModelComponent
from ..components.adapters import IALoraConfig
from ..components.language_model import (
    QueryCompressor,
    ToyTransformerLM,
    compress_frames,
    assemble_input,
    forward_lm,
    decode_with_states,
    extract_mask_embeddings,
    MaskTokenExtractionError,
)
from ..components.mask_decoder import MaskDecoder, MaskOutput, predict_mask
from ..data_management import TaskDataConfig, TaskSample
from ..objectives import (
    LossWeights,
    combine_losses,
    l_txt,
    l_bce,
    l_dice,
    l_ce_semantic,
)
from ..tensor_core import Tensor, sigmoid

import logging

log = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    """
    Sizes of the unified model

    :param int hidden_dim: model width h
    :param int n_blocks: decoder blocks D
    :param int visual_queries: compressor tokens per visual frame K_v
    :param int audio_queries: compressor tokens per audio frame K_a
    :param int rank: adapter rank r
    :param int n_heads: adapter heads n
    :param float init_std: standard deviation of A, W_r and compressor queries
    :param int max_decode_len: maximum number of generated tokens
    """

    hidden_dim: int = 32
    n_blocks: int = 2
    visual_queries: int = 4
    audio_queries: int = 4
    rank: int = 8
    n_heads: int = 3
    init_std: float = 0.02
    max_decode_len: int = 16

    def __post_init__(self):
        # Validates rank and heads against the narrowest adapted layer
        IALoraConfig(self.hidden_dim, self.hidden_dim, self.rank, self.n_heads)
        if self.max_decode_len < 1:
            raise ValueError(
                f"max_decode_len must be at least 1, got {self.max_decode_len}"
            )


@dataclass
class Prediction:
    """
    Decoded output of one sample

    :param list tokens: generated ids
    :param list answer: final answer ids
    :param np.ndarray mask: predicted mask probabilities [C x H x W] for
        segmentation samples (None otherwise)
    """

    tokens: list
    answer: list
    mask: np.ndarray = None


def extract_final_answer(tokens: list, ans_id: int, eos_id: int) -> list:
    """
    Tokens after the last answer sentinel, up to the end token

    A sequence without sentinel has an empty answer.

    :param list tokens: token ids
    :param int ans_id: answer sentinel
    :param int eos_id: end token
    :return: answer ids
    :rtype: list
    """
    tokens = [int(t) for t in tokens]
    if ans_id not in tokens:
        return []
    start = len(tokens) - tokens[::-1].index(ans_id)
    answer = []
    for token in tokens[start:]:
        if token == eos_id:
            break
        answer.append(token)
    return answer


class UnifiedModel(ModelComponent):
    """
    Compressors, adapted language model and mask decoder combined.

    The prompt of a sample is H_0 = [visual tokens; audio tokens; instruction
    embeddings]. Gold targets follow the prompt as decoder input, and the hidden
    states at the mask tokens drive the mask decoder.
    """

    def __init__(
        self,
        model_config: ModelConfig,
        data_config: TaskDataConfig,
        seed: int = 0,
    ):
        """
        Constructor

        :param ModelConfig model_config: model sizes
        :param TaskDataConfig data_config: modality sizes
        :param int seed: seed of all initializations
        """
        rng = np.random.default_rng(seed)
        self._model_config = model_config
        self._data_config = data_config
        self._vocab = data_config.vocabulary()
        h = model_config.hidden_dim
        self.visual_compressor = QueryCompressor(
            data_config.visual_dim, h, model_config.visual_queries, rng
        )
        self.audio_compressor = QueryCompressor(
            data_config.audio_dim, h, model_config.audio_queries, rng
        )
        self.lm = ToyTransformerLM(
            self._vocab,
            hidden_dim=h,
            n_blocks=model_config.n_blocks,
            rank=model_config.rank,
            n_heads=model_config.n_heads,
            rng=rng,
            init_std=model_config.init_std,
        )
        self.mask_decoder = MaskDecoder(
            h, data_config.visual_dim, data_config.n_categories, rng
        )

    @property
    def vocab(self):
        return self._vocab

    @property
    def model_config(self) -> ModelConfig:
        return self._model_config

    @property
    def data_config(self) -> TaskDataConfig:
        return self._data_config

    def prompt_states(self, sample: TaskSample) -> Tensor:
        """
        H_0 of a sample
        """
        H_v = compress_frames(sample.features.visual, self.visual_compressor)
        H_a = compress_frames(sample.features.audio, self.audio_compressor)
        H_t = self.lm.embed(sample.instruction)
        return assemble_input(H_v, H_a, H_t)

    def forced_forward(self, sample: TaskSample) -> tuple:
        """
        Forward with the target appended to the prompt

        :return: logits predicting every target token [m x |V|] and the hidden
            states at the target positions [m x h]
        :rtype: tuple
        """
        H_0 = self.prompt_states(sample)
        offset = H_0.shape[0]
        m = len(sample.target)
        logits, hidden = forward_lm(self.lm, H_0, sample.target)
        return logits[offset - 1 : offset - 1 + m], hidden[offset : offset + m]

    def trace_forward(self, sample: TaskSample):
        return self.forced_forward(sample)

    def decode_mask(self, hidden: Tensor, token_ids: list, sample: TaskSample):
        groups = extract_mask_embeddings(hidden, token_ids, self._vocab)
        return predict_mask(self.mask_decoder, groups, sample.pyramid)

    def loss(self, sample: TaskSample, weights: LossWeights = None) -> tuple:
        """
        Training objective of one sample

        :param TaskSample sample: training sample
        :param LossWeights weights: loss weights
        :return: total loss and the component values as floats
        :rtype: tuple
        """
        logits, hidden = self.forced_forward(sample)
        text = l_txt(logits, sample.target)
        bce = dice = ce = None
        if sample.family == "segmentation":
            output = self.decode_mask(hidden, sample.target, sample)
            if self._data_config.n_categories > 1:
                ce = l_ce_semantic(output.logits, sample.gt["labels"])
            else:
                channel = output.logits[0]
                bce = l_bce(channel, sample.gt["mask"])
                dice = l_dice(sigmoid(channel), sample.gt["mask"])
        L_seg, L = combine_losses(text, bce, dice, ce, weights)
        parts = {
            "l_txt": text.item(),
            "l_bce": bce.item() if bce is not None else 0.0,
            "l_dice": dice.item() if dice is not None else 0.0,
            "l_ce": ce.item() if ce is not None else 0.0,
            "L_seg": L_seg.item() if isinstance(L_seg, Tensor) else float(L_seg),
        }
        return L, parts

    def predict(self, sample: TaskSample) -> Prediction:
        """
        Greedy decode of a sample, with the mask for segmentation samples

        Segmentation decodes that lack a complete set of mask tokens predict
        an empty mask.
        """
        H_0 = self.prompt_states(sample)
        tokens, hidden = decode_with_states(
            self.lm, H_0, self._model_config.max_decode_len
        )
        answer = extract_final_answer(tokens, self._vocab.ans, self._vocab.eos)
        mask = None
        if sample.family == "segmentation":
            size = self._data_config.grid_size
            try:
                output = self.decode_mask(hidden, tokens, sample)
                mask = mask_probabilities(output, self._data_config.n_categories)
            except MaskTokenExtractionError:
                mask = np.zeros((self._data_config.n_categories, size, size))
        return Prediction(tokens=tokens, answer=answer, mask=mask)


def mask_probabilities(output: MaskOutput, n_categories: int) -> np.ndarray:
    """
    Sigmoid probabilities for binary masks, softmax over channels otherwise
    """
    logits = output.logits.values
    if n_categories == 1:
        return expit(logits)
    return softmax(logits, axis=0)
