import json
import warnings

import h5py
import pytest
import numpy as np
import pandas as pd

from ialora_hub.components.adapters import (
    RouterTrace,
    TraceRecord,
    drop_heads,
    ia_lora_layers,
)
from ialora_hub.result_management import (
    create_unique_folder_name,
    create_save_folder,
    write_checkpoint,
    write_json,
    write_traces,
    write_mask_pgm,
    write_scatter_svg,
    print_h5_tree,
    read_checkpoint,
    load_checkpoint_into,
    read_traces,
)
from ialora_hub.evaluation import scatter_coordinates
from tests.utilities import make_tiny_model


def _perturbed_model(seed: int = 0):
    model = make_tiny_model(seed=seed)
    rng = np.random.default_rng(seed + 100)
    for layer in ia_lora_layers(model):
        for head in layer.B:
            head.values = rng.normal(0.0, 0.1, size=head.shape)
    return model


@pytest.mark.result_management
def test_create_unique_folder_name(request):
    path = request.config.result_folder_path
    assert create_unique_folder_name(path, "run") == path / "run"
    create_save_folder(path / "run")
    assert create_unique_folder_name(path, "run") == path / "run_1"
    create_save_folder(path / "run_1")
    assert create_unique_folder_name(path, "run") == path / "run_2"
    # Names are only proposed, not created
    assert not (path / "run_2").exists()


@pytest.mark.result_management
def test_checkpoint_round_trip(request):
    model = _perturbed_model()
    drop_heads(model, {1})
    path = write_checkpoint(
        model,
        request.config.result_folder_path / "checkpoint.h5",
        metadata={"seed": 3, "step": np.int64(7)},
    )

    checkpoint = read_checkpoint(path)
    assert checkpoint["metadata"] == {"seed": 3, "step": 7}
    assert set(checkpoint["state"]) == set(dict(model.named_parameters()))
    assert checkpoint["frozen"]["lm.blocks.0.attn_q.W_o"]
    assert not checkpoint["frozen"]["lm.blocks.0.attn_q.W_r"]

    other = make_tiny_model(seed=1)
    assert load_checkpoint_into(other, path) == {"seed": 3, "step": 7}
    for name, values in model.state_dict().items():
        assert np.array_equal(other.state_dict()[name], values), name
    for layer in ia_lora_layers(other):
        assert layer.drop_mask.tolist() == [True, False, True]


@pytest.mark.result_management
def test_checkpoint_bytes_are_stable(request):
    folder = request.config.result_folder_path
    first = write_checkpoint(_perturbed_model(), folder / "a.h5", {"seed": 0})
    second = write_checkpoint(_perturbed_model(), folder / "b.h5", {"seed": 0})
    assert first.read_bytes() == second.read_bytes()


@pytest.mark.result_management
def test_checkpoint_rejects_foreign_files(request):
    path = request.config.result_folder_path / "foreign.h5"
    with h5py.File(path, "w") as f:
        f.attrs["format"] = "something else"
    with pytest.raises(ValueError):
        read_checkpoint(path)

    with h5py.File(path, "w") as f:
        f.attrs["format"] = "ialora_hub.checkpoint"
        f.attrs["format_version"] = 99
    with pytest.raises(ValueError):
        read_checkpoint(path)


@pytest.mark.result_management
def test_write_json(request):
    path = write_json(
        {"b": np.float64(0.5), "a": np.array([1, 2])},
        request.config.result_folder_path / "report.json",
    )
    text = path.read_text()
    assert text.endswith("}\n")
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {"a": [1, 2], "b": 0.5}


@pytest.mark.result_management
def test_traces_merge_across_files(request):
    folder = request.config.result_folder_path

    def trace(value):
        records = [
            TraceRecord("output", i, np.array([[value, 1.0 - value]] * 2))
            for i in range(2)
        ]
        return RouterTrace("temporal", 2, records)

    write_traces({"temporal": trace(0.25)}, folder / "first.jsonl")
    write_traces([trace(0.75)], folder / "second.jsonl")

    single = read_traces(folder / "first.jsonl")
    assert np.allclose(single["temporal"].profile, [0.25, 0.75])

    merged = read_traces([folder / "first.jsonl", folder / "second.jsonl"])
    temporal = merged["temporal"]
    assert sorted(set(r.sample_index for r in temporal.records)) == [0, 1, 2, 3]
    assert np.allclose(temporal.profile, [0.5, 0.5])
    assert np.allclose(temporal.sample_profiles[:, 0], [0.25, 0.25, 0.75, 0.75])


@pytest.mark.result_management
def test_mask_pgm(request):
    probabilities = np.array([[0.0, 0.5, 1.0], [1.2, -0.1, 0.25]])
    path = write_mask_pgm(
        probabilities, request.config.result_folder_path / "mask.pgm", channel=2
    )
    content = path.read_bytes()
    header = b"P5\n3 2\n255\n"
    assert content.startswith(header)
    assert list(content[len(header) :]) == [0, 128, 255, 255, 0, 64]

    sidecar = json.loads(path.with_suffix(".json").read_text())
    assert sidecar == {"channel": 2, "height": 2, "threshold": 0.5, "width": 3}
    with pytest.raises(ValueError):
        write_mask_pgm(np.zeros(3), request.config.result_folder_path / "bad.pgm")


@pytest.mark.result_management
def test_scatter_svg_is_stable(request):
    folder = request.config.result_folder_path
    rng = np.random.default_rng(0)
    scatter = scatter_coordinates(
        np.array(["temporal"] * 4 + ["spatial"] * 4), rng.dirichlet(np.ones(3), 8)
    )
    first = write_scatter_svg(scatter, folder / "a.svg")
    second = write_scatter_svg(scatter, folder / "b.svg")
    assert first.read_bytes() == second.read_bytes()
    assert b"<svg" in first.read_bytes()

    # No legend without points, so no warning either
    empty = pd.DataFrame(columns=["family", "pair", "x", "y"])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert write_scatter_svg(empty, folder / "empty.svg").exists()


@pytest.mark.result_management
def test_print_h5_tree(request, capsys):
    path = write_checkpoint(
        make_tiny_model(), request.config.result_folder_path / "tree.h5"
    )
    print_h5_tree(path)
    printed = capsys.readouterr().out
    assert "parameters/lm.output.W_r" in printed
    assert "drop_mask/blocks.0.attn_q" in printed
    assert "frozen: True" in printed
