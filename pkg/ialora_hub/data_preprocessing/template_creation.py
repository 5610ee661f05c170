import copy
import json
from pathlib import Path
import os

import logging

log = logging.getLogger(__name__)

CONFIG_FILE_NAME = "ConfigExperiment.json"


class ConfigurationError(ValueError):
    """
    Raised for unknown or invalid configuration entries
    """


def initialize_configuration_templates() -> dict:
    """
    Creates a configuration template and returns it as a dict

    Every leaf holds a description, the default value and, where the choice is
    discrete, the options.

    :return: configuration_template
    :rtype: dict
    """
    configuration_template = {
        "experiment": {
            "seed": {
                "description": "Seed of data generation, initialization and batch "
                "sampling. Identical seeds give identical runs.",
                "value": 0,
            },
            "case_name": {
                "description": "Name of the run folder created in save_path.",
                "value": "ialora_desk",
            },
            "save_path": {
                "description": "Folder in which run folders are created.",
                "value": "./userData/",
            },
            "output_dir": {
                "description": "Fixed output folder. If empty, a unique folder "
                "save_path/case_name(_n) is created.",
                "value": "",
            },
        },
        "model": {
            "hidden_dim": {"description": "Model width h.", "value": 32},
            "n_blocks": {"description": "Number of decoder blocks.", "value": 2},
            "visual_queries": {
                "description": "Compressor tokens per visual frame.",
                "value": 4,
            },
            "audio_queries": {
                "description": "Compressor tokens per audio frame.",
                "value": 4,
            },
            "max_decode_len": {
                "description": "Maximum number of tokens generated at evaluation.",
                "value": 16,
            },
        },
        "lora": {
            "rank": {"description": "Rank of the shared matrix A.", "value": 8},
            "n_heads": {"description": "Number of heads B_i.", "value": 3},
            "init_std": {
                "description": "Standard deviation of A and the router at "
                "initialization (B starts at zero).",
                "value": 0.02,
            },
        },
        "loss_weights": {
            "txt": {"description": "Weight of the text loss.", "value": 1.0},
            "seg": {"description": "Weight of the segmentation loss.", "value": 0.5},
            "bce": {"description": "Weight of the BCE mask loss.", "value": 1.0},
            "dice": {"description": "Weight of the dice mask loss.", "value": 0.5},
            "ce": {
                "description": "Weight of the semantic cross entropy.",
                "value": 1.0,
            },
        },
        "data": {
            "n_frames": {"description": "Frames per sample.", "value": 4},
            "grid_size": {"description": "Side of the visual grid.", "value": 8},
            "audio_bins": {"description": "Audio bins per frame.", "value": 4},
            "audio_noise": {
                "description": "Upper bound of background audio levels.",
                "value": 0.3,
            },
            "with_reasoning": {
                "description": "Prefix targets with reasoning tokens.",
                "options": [0, 1],
                "value": 1,
            },
            "mask_categories": {
                "description": "Mask channels. 1 gives binary masks, more gives "
                "semantic label maps.",
                "value": 1,
            },
            "task_mix": {
                "description": "Share of every task family in the training "
                "batches. Must sum to 1.",
                "value": {
                    "temporal": 0.25,
                    "spatial": 0.25,
                    "reasoning": 0.25,
                    "segmentation": 0.25,
                },
            },
            "train_samples": {
                "description": "Training samples, split over the families by "
                "task_mix.",
                "value": 2000,
            },
            "eval_samples": {
                "description": "Evaluation samples per family.",
                "value": 50,
            },
        },
        "training": {
            "steps": {"description": "Optimizer steps.", "value": 1500},
            "batch_size": {"description": "Samples per step.", "value": 4},
            "base_lr": {
                "description": "Peak learning rate of the warmup-cosine schedule.",
                "value": 2e-3,
            },
            "warmup_ratio": {
                "description": "Share of the steps of the linear warmup.",
                "value": 0.03,
            },
            "weight_decay": {"description": "AdamW weight decay.", "value": 0.0},
            "log_every": {"description": "Logging interval in steps.", "value": 100},
            "dry_run": {
                "description": "Skip training and only evaluate the initial model.",
                "options": [0, 1],
                "value": 0,
            },
        },
        "analysis": {
            "aggregation": {
                "description": "Aggregation of route scores into task profiles.",
                "options": ["flat", "layer_mean"],
                "value": "flat",
            },
            "trace_samples": {
                "description": "Samples per family traced for router analysis.",
                "value": 32,
            },
            "center_profiles": {
                "description": "Subtract the mean profile before computing "
                "cosine similarities.",
                "options": [0, 1],
                "value": 0,
            },
            "head_drop": {
                "description": "Run the head-drop experiment after training.",
                "options": [0, 1],
                "value": 1,
            },
        },
        "reporting": {
            "write_checkpoint": {
                "description": "Write the trained parameters to checkpoint.h5.",
                "options": [0, 1],
                "value": 1,
            },
            "write_traces": {
                "description": "Write raw route scores to traces.jsonl.",
                "options": [0, 1],
                "value": 1,
            },
            "write_scatter": {
                "description": "Render router scatter plots as SVG.",
                "options": [0, 1],
                "value": 1,
            },
            "mask_examples": {
                "description": "Number of predicted masks written as PGM.",
                "value": 0,
            },
        },
    }
    return configuration_template


def create_experiment_templates(path: Path | str):
    """
    Creates an exemplary experiment configuration json file in the specified path

    :param str/Path path: folder to create ConfigExperiment.json in
    :return: path of the configuration file
    :rtype: Path
    """
    if isinstance(path, str):
        path = Path(path)

    config_file = path / CONFIG_FILE_NAME
    if config_file.exists():
        log.info(f"File already exists: {config_file}")
        return config_file

    path.mkdir(parents=True, exist_ok=True)
    with open(config_file, "w") as f:
        json.dump(initialize_configuration_templates(), f, indent=4)
    return config_file


def _is_leaf(node) -> bool:
    return isinstance(node, dict) and "value" in node and "description" in node


def _merge(template: dict, user: dict, prefix: str):
    for key, value in user.items():
        dotted = f"{prefix}{key}"
        if key not in template:
            raise ConfigurationError(f"Unknown configuration key '{dotted}'")
        node = template[key]
        if _is_leaf(node):
            if isinstance(value, dict) and "value" in value:
                value = value["value"]
            if "options" in node and node["options"] and value not in node["options"]:
                raise ConfigurationError(
                    f"Value {value!r} of '{dotted}' is not one of {node['options']}"
                )
            node["value"] = value
        elif isinstance(value, dict):
            _merge(node, value, dotted + ".")
        else:
            raise ConfigurationError(
                f"'{dotted}' is a group, got a plain value {value!r}"
            )


def load_configuration(config: Path | str | dict = None) -> dict:
    """
    Merges a user configuration onto the template

    Leaves may be given in template form ({"value": ...}) or as plain values.
    Unknown keys raise a :class:`ConfigurationError` naming the dotted path,
    missing keys keep their defaults.

    :param config: path of a json file, a dict, or None for the defaults
    :return: complete configuration
    :rtype: dict
    """
    template = initialize_configuration_templates()
    if config is None:
        return template
    if isinstance(config, (str, Path)):
        config = Path(config)
        if not config.exists():
            raise FileNotFoundError(f"Configuration file {config} does not exist")
        with open(config) as json_file:
            config = json.load(json_file)
    _merge(template, copy.deepcopy(config), "")
    log.debug(f"Configuration: {json.dumps(configuration_values(template))}")
    return template


def config_value(config: dict, dotted: str):
    """
    Value of a leaf, addressed as 'group.key'
    """
    node = config
    for part in dotted.split("."):
        if part not in node:
            raise ConfigurationError(f"Unknown configuration key '{dotted}'")
        node = node[part]
    if not _is_leaf(node):
        raise ConfigurationError(f"'{dotted}' is a group, not a leaf")
    return node["value"]


def set_config_value(config: dict, dotted: str, value):
    """
    Overwrites the value of a leaf, addressed as 'group.key'
    """
    config_value(config, dotted)
    node = config
    for part in dotted.split("."):
        node = node[part]
    node["value"] = value


def configuration_values(config: dict) -> dict:
    """
    The configuration without descriptions and options
    """
    if _is_leaf(config):
        return config["value"]
    return {key: configuration_values(node) for key, node in config.items()}


def _list_data_files(folder: str) -> list:
    data_path = Path(os.path.join(os.path.dirname(__file__) + f"/../data/{folder}"))
    names = []
    for root, dirs, files in os.walk(data_path.resolve()):
        for file in files:
            if file.endswith(".json"):
                names.append(file[:-5])
    return sorted(names)


def show_available_templates() -> list:
    """
    Prints and returns all shipped prompt templates
    """
    names = _list_data_files("prompt_templates")
    for name in names:
        print(name)
    return names


def show_available_grammars() -> list:
    """
    Prints and returns all shipped label grammars
    """
    names = _list_data_files("label_grammars")
    for name in names:
        print(name)
    return names
