from dataclasses import dataclass, field
import numpy as np

from ..components.language_model import Vocabulary, TASK_FAMILIES
from ..components.mask_decoder import VisualPyramid

import logging

log = logging.getLogger(__name__)


@dataclass
class TaskDataConfig:
    """
    Sizes of the synthetic modalities

    :param int n_frames: frames T
    :param int grid_size: side of the square visual grid
    :param int audio_bins: audio bins per frame
    :param bool with_reasoning: prefixes targets with reasoning tokens
    :param int n_categories: mask channels; more than 1 gives semantic labels
    :param float audio_noise: upper bound of the background audio level
    """

    n_frames: int = 4
    grid_size: int = 8
    audio_bins: int = 4
    with_reasoning: bool = True
    n_categories: int = 1
    audio_noise: float = 0.3

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError(f"n_frames must be at least 1, got {self.n_frames}")
        if self.grid_size < 2 or self.grid_size % 2:
            raise ValueError(
                f"grid_size must be an even number >= 2, got {self.grid_size}"
            )
        if self.audio_bins < 1:
            raise ValueError(f"audio_bins must be at least 1, got {self.audio_bins}")
        if not 0.0 <= self.audio_noise < 1.0:
            raise ValueError(f"audio_noise must lie in [0, 1), got {self.audio_noise}")
        if self.n_categories < 1:
            raise ValueError(
                f"n_categories must be at least 1, got {self.n_categories}"
            )

    @property
    def visual_dim(self) -> int:
        return 2 + 2 * self.grid_size

    @property
    def audio_dim(self) -> int:
        return 1 + self.audio_bins

    def vocabulary(self) -> Vocabulary:
        return Vocabulary(n_numbers=max(self.grid_size, self.n_frames, 4))


@dataclass
class ModalityFeatures:
    """
    Visual features [T x L_v x D_v] and audio features [T x L_a x D_a]
    """

    visual: np.ndarray
    audio: np.ndarray

    def __post_init__(self):
        self.visual = np.asarray(self.visual, dtype=np.float64)
        self.audio = np.asarray(self.audio, dtype=np.float64)
        if self.visual.ndim != 3 or self.audio.ndim != 3:
            raise ValueError(
                f"Features must be [T x L x D], got {self.visual.shape} and "
                f"{self.audio.shape}"
            )
        if self.visual.shape[0] < 1 or self.visual.shape[0] != self.audio.shape[0]:
            raise ValueError(
                f"Visual and audio frames differ: {self.visual.shape[0]} and "
                f"{self.audio.shape[0]}"
            )
        if not (np.all(np.isfinite(self.visual)) and np.all(np.isfinite(self.audio))):
            raise ValueError("Modality features contain non-finite entries")

    @property
    def n_frames(self) -> int:
        return self.visual.shape[0]


@dataclass
class TaskSample:
    """
    One synthetic instance

    :param str family: temporal, spatial, reasoning or segmentation
    :param ModalityFeatures features: model inputs
    :param list instruction: instruction token ids
    :param list target: target token ids, reasoning + ANS + answer + EOS
    :param list answer: final answer token ids
    :param dict gt: ground truth (timestep, bbox, quadrants, answer, mask,
        labels)
    :param np.ndarray images: visual level per frame and pixel [T x H x W]
    :param np.ndarray audio_levels: audio level per frame and bin [T x bins]
    :param VisualPyramid pyramid: pixel features of segmentation samples
    """

    family: str
    features: ModalityFeatures
    instruction: list
    target: list
    answer: list
    gt: dict = field(default_factory=dict)
    images: np.ndarray = None
    audio_levels: np.ndarray = None
    pyramid: VisualPyramid = None


def visual_features(images: np.ndarray) -> np.ndarray:
    """
    Pixel features [1, level, row one-hot, column one-hot] of every frame

    :param np.ndarray images: levels [T x H x W]
    :return: features [T x H*W x (2 + H + W)]
    :rtype: np.ndarray
    """
    n_frames, height, width = images.shape
    rows = np.repeat(np.eye(height), width, axis=0)
    cols = np.tile(np.eye(width), (height, 1))
    static = np.concatenate([rows, cols], axis=1)
    feats = np.zeros((n_frames, height * width, 2 + height + width))
    feats[:, :, 0] = 1.0
    feats[:, :, 1] = images.reshape(n_frames, height * width)
    feats[:, :, 2:] = static[None]
    return feats


def audio_features(levels: np.ndarray) -> np.ndarray:
    """
    Bin features [level, bin one-hot] of every frame

    :param np.ndarray levels: levels [T x bins]
    :return: features [T x bins x (1 + bins)]
    :rtype: np.ndarray
    """
    n_frames, bins = levels.shape
    feats = np.zeros((n_frames, bins, 1 + bins))
    feats[:, :, 0] = levels
    feats[:, :, 1:] = np.eye(bins)[None]
    return feats


def rasterize_box(box, grid_size: int, value: float = 1.0) -> np.ndarray:
    """
    Solid rectangle of a pixel-inclusive box [x_L, y_T, x_R, y_B]
    """
    image = np.zeros((grid_size, grid_size))
    x_l, y_t, x_r, y_b = (int(v) for v in box)
    image[y_t : y_b + 1, x_l : x_r + 1] = value
    return image


def box_quadrant(box, grid_size: int) -> int:
    """
    Quadrant of the box center: 0 top left, 1 top right, 2 bottom left,
    3 bottom right
    """
    center_x = (box[0] + box[2]) / 2.0
    center_y = (box[1] + box[3]) / 2.0
    half = grid_size / 2.0
    return 2 * int(center_y >= half) + int(center_x >= half)


def _random_box(rng: np.random.Generator, x_range: tuple, y_range: tuple) -> list:
    x_l, x_r = np.sort(rng.integers(x_range[0], x_range[1], size=2))
    y_t, y_b = np.sort(rng.integers(y_range[0], y_range[1], size=2))
    return [int(x_l), int(y_t), int(x_r), int(y_b)]


def _background_audio(rng: np.random.Generator, config: TaskDataConfig) -> np.ndarray:
    size = (config.n_frames, config.audio_bins)
    return rng.uniform(0.0, config.audio_noise, size=size)


def _assemble(
    family: str,
    images: np.ndarray,
    levels: np.ndarray,
    reasoning: list,
    answer: list,
    gt: dict,
    config: TaskDataConfig,
    vocab: Vocabulary,
    pyramid: VisualPyramid = None,
) -> TaskSample:
    prefix = list(reasoning) if config.with_reasoning else []
    target = prefix + [vocab.ans] + list(answer) + [vocab.eos]
    return TaskSample(
        family=family,
        features=ModalityFeatures(visual_features(images), audio_features(levels)),
        instruction=[vocab.bos, vocab.task(family)],
        target=target,
        answer=list(answer),
        gt=gt,
        images=images,
        audio_levels=levels,
        pyramid=pyramid,
    )


def _check_count(count: int):
    if count < 1:
        raise ValueError(f"count must be at least 1, got {count}")


def gen_temporal(seed, count: int, config: TaskDataConfig = None) -> list:
    """
    Audio marker at a random timestep t; the answer is the number token of t

    Every bin of the marker frame is at level 1, background levels stay below
    config.audio_noise. The visual stream is blank.

    :param seed: seed of the generator
    :param int count: number of samples
    :param TaskDataConfig config: modality sizes
    :return: samples
    :rtype: list
    """
    _check_count(count)
    config = config or TaskDataConfig()
    vocab = config.vocabulary()
    rng = np.random.default_rng(seed)
    size = config.grid_size

    samples = []
    for _ in range(count):
        t = int(rng.integers(config.n_frames))
        levels = _background_audio(rng, config)
        levels[t] = 1.0
        images = np.zeros((config.n_frames, size, size))
        samples.append(
            _assemble(
                "temporal",
                images,
                levels,
                [vocab.time_marker, vocab.number(t)],
                [vocab.number(t)],
                {"timestep": t},
                config,
                vocab,
            )
        )
    return samples


def gen_spatial(seed, count: int, config: TaskDataConfig = None) -> list:
    """
    Rectangular blob, identical in every frame; the answer is its box
    [x_L, y_T, x_R, y_B] as number tokens

    :param seed: seed of the generator
    :param int count: number of samples
    :param TaskDataConfig config: modality sizes
    :return: samples
    :rtype: list
    """
    _check_count(count)
    config = config or TaskDataConfig()
    vocab = config.vocabulary()
    rng = np.random.default_rng(seed)
    size = config.grid_size

    samples = []
    for _ in range(count):
        box = _random_box(rng, (0, size), (0, size))
        image = rasterize_box(box, size)
        images = np.repeat(image[None], config.n_frames, axis=0)
        levels = _background_audio(rng, config)
        quadrant = box_quadrant(box, size)
        samples.append(
            _assemble(
                "spatial",
                images,
                levels,
                [vocab.quad_marker, vocab.number(quadrant)],
                [vocab.number(v) for v in box],
                {"bbox": box},
                config,
                vocab,
            )
        )
    return samples


def _distinct_quadrants(rng: np.random.Generator, n_frames: int) -> np.ndarray:
    if n_frames <= 4:
        return rng.permutation(4)[:n_frames]
    while True:
        quadrants = rng.integers(4, size=n_frames)
        if len(set(quadrants.tolist())) > 1:
            return quadrants


def gen_reasoning(seed, count: int, config: TaskDataConfig = None) -> list:
    """
    Audio marker at timestep t and one blob per frame, each frame's blob in its
    own quadrant; the answer is the quadrant of the blob at t

    Quadrants differ between frames (for T <= 4 all of them), so neither stream
    alone determines the answer.

    :param seed: seed of the generator
    :param int count: number of samples
    :param TaskDataConfig config: modality sizes
    :return: samples
    :rtype: list
    """
    _check_count(count)
    config = config or TaskDataConfig()
    if config.n_frames < 2:
        raise ValueError("Reasoning samples need at least two frames")
    vocab = config.vocabulary()
    rng = np.random.default_rng(seed)
    size = config.grid_size
    half = size // 2

    samples = []
    for _ in range(count):
        t = int(rng.integers(config.n_frames))
        quadrants = _distinct_quadrants(rng, config.n_frames)
        images = np.zeros((config.n_frames, size, size))
        for frame, quadrant in enumerate(quadrants):
            y0, x0 = half * (quadrant // 2), half * (quadrant % 2)
            box = _random_box(rng, (x0, x0 + half), (y0, y0 + half))
            images[frame] = rasterize_box(box, size)
        levels = _background_audio(rng, config)
        levels[t] = 1.0
        answer = int(quadrants[t])
        samples.append(
            _assemble(
                "reasoning",
                images,
                levels,
                [
                    vocab.time_marker,
                    vocab.number(t),
                    vocab.quad_marker,
                    vocab.number(answer),
                ],
                [vocab.number(answer)],
                {
                    "timestep": t,
                    "quadrants": [int(q) for q in quadrants],
                    "answer": answer,
                },
                config,
                vocab,
            )
        )
    return samples


def build_segmentation_sample(
    mask: np.ndarray,
    rng: np.random.Generator,
    config: TaskDataConfig = None,
    category: int = 1,
) -> TaskSample:
    """
    Segmentation sample of a given blob

    The blob is shown in every frame at level category; the pyramid is built
    from the pixel features of one frame.

    :param np.ndarray mask: binary blob [H x W]
    :param np.random.Generator rng: generator of the background audio
    :param TaskDataConfig config: modality sizes
    :param int category: class id of the blob (1 for binary masks)
    :return: sample
    :rtype: TaskSample
    """
    config = config or TaskDataConfig()
    vocab = config.vocabulary()
    mask = np.asarray(mask).astype(bool)
    size = config.grid_size
    if mask.shape != (size, size):
        raise ValueError(f"Mask shape {mask.shape} does not fit a {size} grid")
    if not mask.any():
        raise ValueError("Segmentation samples need a nonempty blob")
    if not 1 <= category < max(config.n_categories, 2):
        raise ValueError(
            f"Category {category} invalid for {config.n_categories} categories"
        )

    image = mask * float(category)
    images = np.repeat(image[None], config.n_frames, axis=0)
    levels = _background_audio(rng, config)
    rows, cols = np.nonzero(mask)
    box = [int(cols.min()), int(rows.min()), int(cols.max()), int(rows.max())]
    quadrant = box_quadrant(box, size)
    gt = {"mask": mask.astype(np.float64), "bbox": box}
    if config.n_categories > 1:
        gt["labels"] = (mask * category).astype(np.int64)

    fine = visual_features(images[:1])[0].reshape(size, size, config.visual_dim)
    return _assemble(
        "segmentation",
        images,
        levels,
        [vocab.quad_marker, vocab.number(quadrant)],
        list(vocab.mask_ids),
        gt,
        config,
        vocab,
        pyramid=VisualPyramid.from_fine(fine),
    )


def gen_segmentation(seed, count: int, config: TaskDataConfig = None) -> list:
    """
    Rectangular blob; the answer is the six mask tokens and the ground truth
    is the blob mask (with class labels if config.n_categories > 1)

    :param seed: seed of the generator
    :param int count: number of samples
    :param TaskDataConfig config: modality sizes
    :return: samples
    :rtype: list
    """
    _check_count(count)
    config = config or TaskDataConfig()
    rng = np.random.default_rng(seed)
    size = config.grid_size

    samples = []
    for _ in range(count):
        box = _random_box(rng, (0, size), (0, size))
        category = 1
        if config.n_categories > 1:
            category = int(rng.integers(1, config.n_categories))
        mask = rasterize_box(box, size) > 0
        samples.append(build_segmentation_sample(mask, rng, config, category))
    return samples


GENERATORS = {
    "temporal": gen_temporal,
    "spatial": gen_spatial,
    "reasoning": gen_reasoning,
    "segmentation": gen_segmentation,
}


def family_seeds(seed: int) -> dict:
    """
    Independent child seeds of every family
    """
    children = np.random.SeedSequence(seed).spawn(len(TASK_FAMILIES))
    return {
        family: int(child.generate_state(1)[0])
        for family, child in zip(TASK_FAMILIES, children)
    }


def generate_suite(
    seed: int, counts: dict, config: TaskDataConfig = None
) -> list:
    """
    Samples of several families, grouped by family in TASK_FAMILIES order

    :param int seed: suite seed
    :param dict counts: family -> number of samples (families with 0 skipped)
    :param TaskDataConfig config: modality sizes
    :return: samples
    :rtype: list
    """
    unknown = sorted(set(counts) - set(GENERATORS))
    if unknown:
        raise KeyError(f"Unknown task families {unknown}")
    seeds = family_seeds(seed)
    suite = []
    for family in TASK_FAMILIES:
        count = int(counts.get(family, 0))
        if count > 0:
            suite.extend(GENERATORS[family](seeds[family], count, config))
    log.debug(f"Generated suite with {len(suite)} samples ({counts})")
    return suite
