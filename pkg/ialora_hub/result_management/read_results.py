import json
from pathlib import Path

import h5py
import numpy as np

from ..components.adapters import RouterTrace, ia_lora_layers
from .save_results import CHECKPOINT_FORMAT, CHECKPOINT_VERSION


def print_h5_tree(file_path: Path | str):
    """
    Function to print the structure of a h5 file

    The structure of a h5 file is a tree structure: the h5 file is the root group,
    from which all groups stem, and datasets are the leaves contained within a
    group.

    :param Path, str file_path: Path to H5 File
    """
    with h5py.File(file_path, "r") as hdf_file:

        def print_attrs(name, obj):
            print(name)
            for key, val in obj.attrs.items():
                print(f"    {key}: {val}")

        hdf_file.visititems(print_attrs)


def read_checkpoint(file_path: Path | str) -> dict:
    """
    Reads a checkpoint written by :func:`write_checkpoint`

    :param Path, str file_path: path of the checkpoint
    :return: dict with the keys ``state`` (name -> values), ``frozen``
        (name -> bool), ``drop_mask`` (layer id -> bool array) and ``metadata``
    :rtype: dict
    """
    with h5py.File(file_path, "r") as f:
        if f.attrs.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{file_path} is not an ialora_hub checkpoint")
        version = int(f.attrs["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(
                f"Checkpoint version {version} is not supported, expected "
                f"{CHECKPOINT_VERSION}"
            )
        metadata = {
            key: json.loads(value)
            for key, value in f.attrs.items()
            if key not in ("format", "format_version")
        }
        state, frozen = {}, {}
        for name, dataset in f["parameters"].items():
            state[name] = np.array(dataset[()], dtype=np.float64)
            frozen[name] = bool(dataset.attrs["frozen"])
        drop_mask = {
            layer_id: np.array(dataset[()], dtype=bool)
            for layer_id, dataset in f["drop_mask"].items()
        }
    return {
        "state": state,
        "frozen": frozen,
        "drop_mask": drop_mask,
        "metadata": metadata,
    }


def load_checkpoint_into(model, file_path: Path | str) -> dict:
    """
    Copies parameters and drop masks of a checkpoint into a model of the same
    architecture

    :return: checkpoint metadata
    :rtype: dict
    """
    checkpoint = read_checkpoint(file_path)
    model.load_state_dict(checkpoint["state"], strict=True)
    for layer in ia_lora_layers(model):
        if layer.layer_id in checkpoint["drop_mask"]:
            layer.drop_mask = checkpoint["drop_mask"][layer.layer_id].copy()
    return checkpoint["metadata"]


def read_json(file_path: Path | str) -> dict:
    with open(file_path) as f:
        return json.load(f)


def read_trace_records(file_path: Path | str) -> list:
    """
    All records of a traces.jsonl file
    """
    records = []
    with open(file_path) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def read_traces(paths, aggregation: str = "flat") -> dict:
    """
    Merges the traces of one or several jsonl files

    Files of independent runs may trace the same family; their records are kept
    apart by offsetting the sample indices of every further file.

    :param paths: path or list of paths
    :param str aggregation: flat or layer_mean
    :return: dict family -> RouterTrace
    :rtype: dict
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    merged = []
    offsets = {}
    for path in paths:
        records = read_trace_records(path)
        highest = {}
        for record in records:
            tag = record["task_tag"]
            record = dict(record)
            record["sample_index"] = int(record["sample_index"]) + offsets.get(tag, 0)
            highest[tag] = max(highest.get(tag, -1), record["sample_index"])
            merged.append(record)
        for tag, value in highest.items():
            offsets[tag] = value + 1
    return RouterTrace.from_records(merged, aggregation)
