import json
from dataclasses import asdict
from pathlib import Path

import h5py
import numpy as np

from .task_generation import (
    TaskDataConfig,
    TaskSample,
    ModalityFeatures,
    visual_features,
    audio_features,
)
from ..components.mask_decoder import VisualPyramid

import logging

log = logging.getLogger(__name__)

SUITE_FORMAT = "ialora_hub.suite"
SUITE_FORMAT_VERSION = 1


def save_suite(samples: list, path: Path | str, config: TaskDataConfig):
    """
    Writes a suite to a HDF5 file

    Only the raw levels, token ids and ground truth are stored; features and
    pyramids are rebuilt on loading. Layout:

    - root attrs: format, format_version, data_config (JSON)
    - group sample_<i> (attr family): images, audio_levels, instruction,
      target, answer; subgroup gt with one dataset per field

    :param list samples: samples to write
    :param Path, str path: target file
    :param TaskDataConfig config: sizes the samples were generated with
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with h5py.File(path, mode="w", track_order=True) as f:
        f.attrs["format"] = SUITE_FORMAT
        f.attrs["format_version"] = SUITE_FORMAT_VERSION
        f.attrs["data_config"] = json.dumps(asdict(config), sort_keys=True)
        for i, sample in enumerate(samples):
            group = f.create_group(f"sample_{i:05d}")
            group.attrs["family"] = sample.family
            group.create_dataset("images", data=sample.images, track_times=False)
            group.create_dataset(
                "audio_levels", data=sample.audio_levels, track_times=False
            )
            for key in ("instruction", "target", "answer"):
                group.create_dataset(
                    key,
                    data=np.asarray(getattr(sample, key), dtype=np.int64),
                    track_times=False,
                )
            gt = group.create_group("gt")
            for key, value in sample.gt.items():
                gt.create_dataset(key, data=np.asarray(value), track_times=False)
    log.info(f"Suite with {len(samples)} samples written to {path}")


def load_suite(path: Path | str) -> tuple:
    """
    Reads a suite written by :func:`save_suite`

    :param Path, str path: suite file
    :return: samples and the data configuration
    :rtype: tuple
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Suite file {path} does not exist")
    samples = []
    with h5py.File(path, mode="r") as f:
        if f.attrs.get("format") != SUITE_FORMAT:
            raise ValueError(f"{path} is not a task suite file")
        version = int(f.attrs["format_version"])
        if version > SUITE_FORMAT_VERSION:
            raise ValueError(
                f"Suite format version {version} is newer than the supported "
                f"version {SUITE_FORMAT_VERSION}"
            )
        config = TaskDataConfig(**json.loads(f.attrs["data_config"]))
        for name in sorted(f.keys()):
            group = f[name]
            gt = {}
            for key, dataset in group["gt"].items():
                value = dataset[()]
                if isinstance(value, np.ndarray) and value.ndim > 0:
                    gt[key] = value.tolist() if key in ("bbox", "quadrants") else value
                else:
                    gt[key] = int(value)
            samples.append(
                sample_from_arrays(
                    family=str(group.attrs["family"]),
                    images=group["images"][()],
                    audio_levels=group["audio_levels"][()],
                    instruction=group["instruction"][()].tolist(),
                    target=group["target"][()].tolist(),
                    answer=group["answer"][()].tolist(),
                    gt=gt,
                    config=config,
                )
            )
    log.info(f"Suite with {len(samples)} samples read from {path}")
    return samples, config


def sample_from_arrays(
    family: str,
    images: np.ndarray,
    audio_levels: np.ndarray,
    instruction: list,
    target: list,
    answer: list,
    gt: dict,
    config: TaskDataConfig,
) -> TaskSample:
    """
    Rebuilds a sample with its features from stored levels
    """
    pyramid = None
    if family == "segmentation":
        size = config.grid_size
        fine = visual_features(images[:1])[0].reshape(size, size, config.visual_dim)
        pyramid = VisualPyramid.from_fine(fine)
    return TaskSample(
        family=family,
        features=ModalityFeatures(
            visual_features(images), audio_features(audio_levels)
        ),
        instruction=instruction,
        target=target,
        answer=answer,
        gt=gt,
        images=images,
        audio_levels=audio_levels,
        pyramid=pyramid,
    )
