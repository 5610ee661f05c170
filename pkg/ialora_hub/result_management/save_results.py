import json
from pathlib import Path

import h5py
import numpy as np
import pandas as pd
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from ..components.adapters import ia_lora_layers
from .utilities import to_builtin

import logging

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ialora_hub.checkpoint"
CHECKPOINT_VERSION = 1


def _create_untimed_file(file_path: Path) -> h5py.File:
    # Object headers of the root group carry no modification time
    fcpl = h5py.h5p.create(h5py.h5p.FILE_CREATE)
    fcpl.set_obj_track_times(False)
    fid = h5py.h5f.create(str(file_path).encode(), h5py.h5f.ACC_TRUNC, fcpl=fcpl)
    return h5py.File(fid)


def _create_untimed_group(parent: h5py.Group, name: str) -> h5py.Group:
    gcpl = h5py.h5p.create(h5py.h5p.GROUP_CREATE)
    gcpl.set_obj_track_times(False)
    return h5py.Group(h5py.h5g.create(parent.id, name.encode(), gcpl=gcpl))


def write_checkpoint(model, file_path: Path | str, metadata: dict = None) -> Path:
    """
    Writes all parameters and drop masks of a model to an HDF5 file

    Every named parameter becomes one dataset (attribute ``frozen``), drop masks
    are stored per adapted layer in the group ``drop_mask``. Objects are written
    without timestamps, so identical parameters give identical files.

    :param model: model component to store
    :param Path, str file_path: path of the checkpoint file
    :param dict metadata: json-serializable values stored as root attributes
    :return: path of the checkpoint
    :rtype: Path
    """
    file_path = Path(file_path)
    log.info(f"Writing checkpoint to {file_path}")
    with _create_untimed_file(file_path) as f:
        f.attrs["format"] = CHECKPOINT_FORMAT
        f.attrs["format_version"] = CHECKPOINT_VERSION
        for key, value in (metadata or {}).items():
            f.attrs[key] = json.dumps(to_builtin(value), sort_keys=True)

        parameters = _create_untimed_group(f, "parameters")
        for name, parameter in model.named_parameters():
            dataset = parameters.create_dataset(
                name, data=parameter.values, track_times=False
            )
            dataset.attrs["frozen"] = bool(parameter.frozen)

        masks = _create_untimed_group(f, "drop_mask")
        for layer in ia_lora_layers(model):
            masks.create_dataset(
                layer.layer_id,
                data=layer.drop_mask.astype(np.uint8),
                track_times=False,
            )
    return file_path


def write_json(data: dict, file_path: Path | str) -> Path:
    """
    Writes a dict as json with sorted keys
    """
    file_path = Path(file_path)
    with open(file_path, "w") as f:
        json.dump(to_builtin(data), f, indent=2, sort_keys=True)
        f.write("\n")
    return file_path


def write_table(table: pd.DataFrame, file_path: Path | str) -> Path:
    """
    Writes a table as CSV without index
    """
    file_path = Path(file_path)
    table.to_csv(file_path, index=False)
    return file_path


def write_traces(traces, file_path: Path | str) -> Path:
    """
    Writes raw route scores as json lines, one line per token row

    :param traces: dict family -> RouterTrace or a list of RouterTraces
    :param Path, str file_path: path of the jsonl file
    :return: path of the file
    :rtype: Path
    """
    if isinstance(traces, dict):
        traces = [traces[k] for k in sorted(traces)]
    file_path = Path(file_path)
    with open(file_path, "w") as f:
        for trace in traces:
            for record in trace.to_records():
                f.write(json.dumps(record, sort_keys=True) + "\n")
    return file_path


def write_mask_pgm(
    probabilities: np.ndarray,
    file_path: Path | str,
    threshold: float = 0.5,
    channel: int = 0,
) -> Path:
    """
    Writes one mask channel as binary PGM (P5) with a json sidecar

    Probabilities are scaled to 0-255. The sidecar ``<name>.json`` holds height,
    width, threshold and channel.

    :param np.ndarray probabilities: mask probabilities [H x W]
    :param Path, str file_path: path of the pgm file
    :param float threshold: binarization threshold used by the metrics
    :param int channel: channel index of the mask
    :return: path of the pgm file
    :rtype: Path
    """
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if probabilities.ndim != 2:
        raise ValueError(f"Expected a [H x W] mask, got shape {probabilities.shape}")
    height, width = probabilities.shape
    pixels = np.rint(np.clip(probabilities, 0.0, 1.0) * 255).astype(np.uint8)
    file_path = Path(file_path)
    with open(file_path, "wb") as f:
        f.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())
    write_json(
        {
            "height": height,
            "width": width,
            "threshold": threshold,
            "channel": channel,
        },
        file_path.with_suffix(".json"),
    )
    return file_path


def write_scatter_svg(scatter: pd.DataFrame, file_path: Path | str) -> Path:
    """
    Renders router weights of consecutive head pairs, one panel per pair and
    one color per task family

    The svg carries no date and a fixed hash salt, so identical coordinates
    give identical files.

    :param pd.DataFrame scatter: coordinates as returned by
        :func:`scatter_coordinates`
    :param Path, str file_path: path of the svg file
    :return: path of the svg
    :rtype: Path
    """
    file_path = Path(file_path)
    pairs = list(dict.fromkeys(scatter["pair"])) or ["h0-h1"]
    with plt.rc_context({"svg.hashsalt": "ialora_hub", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(
            1, len(pairs), figsize=(4 * len(pairs), 4), squeeze=False
        )
        for ax, pair in zip(axes[0], pairs):
            subset = scatter[scatter["pair"] == pair]
            for family in sorted(subset["family"].unique()):
                points = subset[subset["family"] == family]
                ax.scatter(points["x"], points["y"], s=8, label=family)
            heads = pair.split("-")
            ax.set_xlabel(f"head {heads[0][1:]}")
            ax.set_ylabel(f"head {heads[-1][1:]}")
            ax.set_xlim(0, 1)
            ax.set_ylim(0, 1)
        if not scatter.empty:
            axes[0][0].legend(loc="upper right", fontsize="small")
        fig.tight_layout()
        fig.savefig(file_path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return file_path
