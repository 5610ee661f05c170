import numpy as np

from ..components.adapters import ia_lora_layers
from ..data_management import TaskDataConfig, gen_segmentation, gen_spatial
from ..model_construction import ModelConfig, UnifiedModel
from ..tensor_core import finite_diff_check, GradientCheckReport

import logging

log = logging.getLogger(__name__)

TINY_MODEL = ModelConfig(
    hidden_dim=8,
    n_blocks=1,
    visual_queries=2,
    audio_queries=2,
    rank=2,
    n_heads=3,
    max_decode_len=12,
)
TINY_DATA = TaskDataConfig(n_frames=2, grid_size=4, audio_bins=2)


def check_gradients(
    seed: int = 0,
    max_entries: int = 4,
    tol: float = 1e-4,
    family: str = "segmentation",
    model_config: ModelConfig = None,
    data_config: TaskDataConfig = None,
) -> GradientCheckReport:
    """
    Finite-difference check of every trainable parameter of a tiny model

    The heads B_i start at zero; they are drawn randomly here so that the
    gradients of A and the router do not vanish.

    :param int seed: seed of model, sample and entry sampling
    :param int max_entries: checked entries per parameter
    :param float tol: relative tolerance
    :param str family: segmentation (text and mask losses) or spatial
        (text loss only)
    :param ModelConfig model_config: model sizes, tiny defaults if None
    :param TaskDataConfig data_config: modality sizes, tiny defaults if None
    :return: one check per named trainable parameter
    :rtype: GradientCheckReport
    """
    model_config = model_config or TINY_MODEL
    data_config = data_config or TINY_DATA
    rng = np.random.default_rng(seed)
    model = UnifiedModel(model_config, data_config, seed=seed)
    for layer in ia_lora_layers(model):
        for head in layer.B:
            head.values = rng.normal(0.0, 0.1, size=head.shape)

    generator = gen_segmentation if family == "segmentation" else gen_spatial
    sample = generator(seed, 1, data_config)[0]
    named = [(n, p) for n, p in model.named_parameters() if not p.frozen]

    report = finite_diff_check(
        lambda: model.loss(sample)[0],
        [p for _, p in named],
        tol=tol,
        max_entries=max_entries,
        rng=rng,
    )
    for check, (name, _) in zip(report.checks, named):
        check.name = name
    log.info(
        f"Gradient check (seed {seed}, {family}): max relative error "
        f"{report.max_rel_error:.2e} over {len(named)} parameters"
    )
    return report


def check_gradients_over_seeds(seeds, **kwargs) -> list:
    """
    Records of :func:`check_gradients` for several seeds
    """
    records = []
    for seed in seeds:
        report = check_gradients(seed=seed, **kwargs)
        for record in report.to_records():
            record["seed"] = int(seed)
            records.append(record)
    return records
