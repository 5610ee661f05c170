import pytest
import numpy as np

from ialora_hub.tensor_core import (
    Tensor,
    DimensionError,
    AdamW,
    recording,
    cosine_warmup_lr,
)
from ialora_hub.components.adapters import set_bypass, ia_lora_layers
from ialora_hub.components.language_model import (
    Vocabulary,
    TASK_FAMILIES,
    QueryCompressor,
    ToyTransformerLM,
    MaskTokenExtractionError,
    compress,
    compress_frames,
    assemble_input,
    forward_lm,
    greedy_decode,
    extract_mask_embeddings,
)
from ialora_hub.data_management import (
    gen_temporal,
    gen_spatial,
    gen_reasoning,
    gen_segmentation,
)
from ialora_hub.model_construction import (
    TrainingDivergenceError,
    extract_final_answer,
    train_step,
    sample_batch,
    run_training,
)
from tests.utilities import make_tiny_model


@pytest.mark.model_stack
def test_vocabulary_layout():
    vocab = Vocabulary(n_numbers=8)
    assert len(vocab) == 24
    assert (vocab.pad, vocab.bos, vocab.eos, vocab.ans) == (0, 1, 2, 3)
    assert [vocab.task(f) for f in TASK_FAMILIES] == [4, 5, 6, 7]
    assert (vocab.time_marker, vocab.quad_marker) == (8, 9)
    assert vocab.number(0) == 10 and vocab.number(7) == 17
    assert vocab.value_of(13) == 3
    assert vocab.value_of(vocab.eos) is None
    assert vocab.mask_ids == (18, 19, 20, 21, 22, 23)
    assert vocab.mask_groups == ((18, 19, 20), (21, 22, 23))
    assert vocab.decode([1, 10, 2]) == ["<BOS>", "N0", "<EOS>"]
    with pytest.raises(ValueError):
        vocab.number(8)
    with pytest.raises(KeyError):
        vocab.task("captioning")
    with pytest.raises(ValueError):
        Vocabulary(n_numbers=60)


@pytest.mark.model_stack
def test_compressor_shapes():
    rng = np.random.default_rng(0)
    comp = QueryCompressor(feature_dim=5, hidden_dim=8, n_queries=3, rng=rng)
    tokens = compress(Tensor(rng.normal(size=(11, 5))), comp)
    assert tokens.shape == (3, 8)

    frames = compress_frames(rng.normal(size=(4, 7, 5)), comp)
    assert frames.shape == (12, 8)
    # Frames are compressed independently
    single = compress_frames(np.zeros((1, 7, 5)) + 1.0, comp).values
    repeated = compress_frames(np.ones((2, 7, 5)), comp).values
    assert np.allclose(repeated[:3], single) and np.allclose(repeated[3:], single)

    with pytest.raises(DimensionError):
        compress(Tensor(rng.normal(size=(11, 4))), comp)
    with pytest.raises(ValueError):
        compress_frames(np.full((1, 2, 5), np.nan), comp)


@pytest.mark.model_stack
def test_assemble_input():
    H_v, H_a = Tensor(np.ones((4, 3))), Tensor(np.zeros((2, 3)))
    H_0 = assemble_input(H_v, H_a, Tensor(np.zeros((0, 3))))
    assert H_0.shape == (6, 3)
    with pytest.raises(DimensionError):
        assemble_input(H_v, Tensor(np.zeros((2, 4))), Tensor(np.zeros((1, 3))))


@pytest.mark.model_stack
def test_language_model_is_causal():
    vocab = Vocabulary()
    lm = ToyTransformerLM(vocab, hidden_dim=8, n_blocks=2, rank=2, n_heads=3)
    rng = np.random.default_rng(1)
    H_0 = Tensor(rng.normal(size=(5, 8)))
    logits, hidden = forward_lm(lm, H_0, [vocab.ans, vocab.number(1)])
    assert logits.shape == (7, len(vocab))
    assert hidden.shape == (7, 8)
    prefix_logits, _ = forward_lm(lm, H_0)
    assert np.allclose(logits.values[:5], prefix_logits.values)

    with pytest.raises(DimensionError):
        forward_lm(lm, Tensor(rng.normal(size=(5, 6))))
    with pytest.raises(DimensionError):
        lm.embed([len(vocab)])


@pytest.mark.model_stack
def test_greedy_decode_stops():
    vocab = Vocabulary()
    lm = ToyTransformerLM(vocab, hidden_dim=8, n_blocks=1, rank=2, n_heads=2)
    H_0 = Tensor(np.random.default_rng(2).normal(size=(3, 8)))
    tokens = greedy_decode(lm, H_0, max_len=5)
    assert 1 <= len(tokens) <= 5
    assert vocab.eos not in tokens[:-1]

    # A zero output layer ties every logit; ties go to the lowest id
    lm.output.W_o.values[:] = 0.0
    tokens = greedy_decode(lm, H_0, max_len=5, eos_id=vocab.pad)
    assert tokens == [vocab.pad]
    with pytest.raises(ValueError):
        greedy_decode(lm, H_0, max_len=0)


@pytest.mark.model_stack
def test_extract_final_answer():
    vocab = Vocabulary()
    ans, eos = vocab.ans, vocab.eos
    assert extract_final_answer([8, 12, ans, 12, eos], ans, eos) == [12]
    assert extract_final_answer([ans, 11, ans, 13, 14, eos, 15], ans, eos) == [
        13,
        14,
    ]
    assert extract_final_answer([12, 13], ans, eos) == []
    assert extract_final_answer([12, ans], ans, eos) == []


@pytest.mark.model_stack
def test_extract_mask_embeddings():
    vocab = Vocabulary()
    ids = [vocab.ans] + list(vocab.mask_ids) + [vocab.eos]
    hidden = Tensor(np.arange(8 * 2, dtype=float).reshape(8, 2))
    coarse, fine = extract_mask_embeddings(hidden, ids, vocab)
    assert np.array_equal(coarse.values, hidden.values[1:4])
    assert np.array_equal(fine.values, hidden.values[4:7])

    with pytest.raises(MaskTokenExtractionError):
        extract_mask_embeddings(hidden[:6], ids[:6], vocab)
    duplicated = ids[:-1] + [vocab.mask_ids[0]]
    with pytest.raises(MaskTokenExtractionError):
        extract_mask_embeddings(hidden, duplicated, vocab)
    with pytest.raises(DimensionError):
        extract_mask_embeddings(hidden[:5], ids, vocab)


@pytest.mark.model_stack
def test_prompt_layout():
    model = make_tiny_model()
    sample = gen_reasoning(0, 1, model.data_config)[0]
    H_0 = model.prompt_states(sample)
    T = model.data_config.n_frames
    assert H_0.shape == (T * 2 + T * 2 + 2, 8)

    logits, hidden = model.forced_forward(sample)
    assert logits.shape == (len(sample.target), len(model.vocab))
    assert hidden.shape == (len(sample.target), 8)


@pytest.mark.model_stack
def test_initial_model_equals_frozen_model():
    """
    At initialization the adapted model computes exactly what the frozen base
    model computes
    """
    model = make_tiny_model()
    sample = gen_spatial(0, 1, model.data_config)[0]
    logits, hidden = model.forced_forward(sample)
    set_bypass(model, False)
    base_logits, base_hidden = model.forced_forward(sample)
    set_bypass(model, True)
    assert np.array_equal(logits.values, base_logits.values)
    assert np.array_equal(hidden.values, base_hidden.values)


@pytest.mark.model_stack
def test_loss_gradients_reach_trainable_parameters():
    model = make_tiny_model()
    sample = gen_segmentation(0, 1, model.data_config)[0]
    model.zero_grad()
    with recording() as tape:
        L, parts = model.loss(sample)
    tape.backward(L)
    assert np.isfinite(L.item())
    assert parts["l_bce"] > 0.0 and parts["l_dice"] > 0.0
    assert parts["L_seg"] == pytest.approx(parts["l_bce"] + 0.5 * parts["l_dice"])
    assert L.item() == pytest.approx(parts["l_txt"] + 0.5 * parts["L_seg"])

    heads = [head for layer in ia_lora_layers(model) for head in layer.B]
    assert all(head.grad is not None for head in heads)
    assert any(np.abs(head.grad).max() > 0.0 for head in heads)
    assert model.mask_decoder.fusion_weights.grad is not None

    # Text-only samples have no mask terms
    L, parts = model.loss(gen_temporal(0, 1, model.data_config)[0])
    assert parts["l_bce"] == 0.0 and parts["L_seg"] == 0.0


@pytest.mark.model_stack
def test_training_reduces_loss_and_keeps_frozen_weights():
    model = make_tiny_model(seed=3)
    frozen_before = {p.name: p.values.copy() for p in model.frozen_parameters()}
    batch = gen_temporal(1, 2, model.data_config)
    optimizer = AdamW(model.trainable_parameters())
    losses = [train_step(model, optimizer, batch, lr=1e-2)["loss"] for _ in range(12)]
    assert losses[-1] < losses[0]
    for p in model.frozen_parameters():
        assert np.array_equal(p.values, frozen_before[p.name])


@pytest.mark.model_stack
def test_sample_batch_respects_proportions():
    model = make_tiny_model()
    pools = {
        "temporal": gen_temporal(0, 2, model.data_config),
        "spatial": gen_spatial(0, 2, model.data_config),
    }
    rng = np.random.default_rng(0)
    batch = sample_batch(rng, pools, {"temporal": 1.0, "spatial": 0.0}, 6)
    assert [s.family for s in batch] == ["temporal"] * 6
    with pytest.raises(ValueError):
        sample_batch(rng, pools, {"reasoning": 1.0}, 2)


@pytest.mark.model_stack
def test_non_finite_loss_stops_training():
    model = make_tiny_model()
    model.lm.output.W_o.values = np.full(model.lm.output.W_o.shape, np.nan)
    optimizer = AdamW(model.trainable_parameters())
    before = {p.name: p.values.copy() for p in model.trainable_parameters()}
    with pytest.raises(TrainingDivergenceError):
        train_step(model, optimizer, gen_spatial(0, 1, model.data_config), lr=1e-3)
    for p in model.trainable_parameters():
        assert np.array_equal(p.values, before[p.name])


@pytest.mark.model_stack
@pytest.mark.parametrize("steps", [1, 2, 5])
def test_every_update_has_a_positive_learning_rate(steps):
    model = make_tiny_model()
    pools = {"spatial": gen_spatial(0, 2, model.data_config)}
    curve = run_training(
        model,
        pools,
        {"spatial": 1.0},
        steps=steps,
        batch_size=1,
        base_lr=2e-3,
        warmup_ratio=0.5,
        weight_decay=0.0,
        seed=0,
    )
    assert [r["step"] for r in curve] == list(range(1, steps + 1))
    assert all(r["lr"] > 0.0 for r in curve)
    assert [r["lr"] for r in curve] == [
        cosine_warmup_lr(k, steps + 1, 2e-3, 0.5) for k in range(1, steps + 1)
    ]
