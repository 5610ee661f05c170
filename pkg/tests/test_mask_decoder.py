import pytest
import numpy as np

from ialora_hub.tensor_core import Tensor, finite_diff_check, sum, mul
from ialora_hub.components.mask_decoder import (
    MaskDecoder,
    VisualPyramid,
    DecoderShapeError,
    aggregate_group,
    decode_scale,
    propagate_bias,
    upsample_bilinear,
    combine_scales,
    predict_mask,
)


def _pyramid(size: int = 4, depth: int = 5, seed: int = 0) -> VisualPyramid:
    fine = np.random.default_rng(seed).normal(size=(size, size, depth))
    return VisualPyramid.from_fine(fine)


def _groups(hidden_dim: int = 6, seed: int = 1) -> tuple:
    rng = np.random.default_rng(seed)
    return (
        Tensor(rng.normal(size=(3, hidden_dim))),
        Tensor(rng.normal(size=(3, hidden_dim))),
    )


@pytest.mark.mask_decoder
def test_pyramid_pooling_and_shapes():
    fine = np.arange(4 * 4 * 1, dtype=float).reshape(4, 4, 1)
    pyramid = VisualPyramid.from_fine(fine)
    assert pyramid.coarse.shape == (2, 2, 1)
    assert pyramid.coarse[0, 0, 0] == np.mean([0.0, 1.0, 4.0, 5.0])
    assert pyramid.feature_dim == 1
    with pytest.raises(DecoderShapeError):
        VisualPyramid(coarse=np.zeros((2, 2, 3)), fine=np.zeros((3, 4, 3)))
    with pytest.raises(DecoderShapeError):
        VisualPyramid.from_fine(np.zeros((3, 4, 2)))


@pytest.mark.mask_decoder
def test_group_aggregation():
    hidden = Tensor(np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]]))
    prompt = aggregate_group(hidden, Tensor(np.zeros(3)))
    assert np.allclose(prompt.values, [[1.0, 1.0]])
    prompt = aggregate_group(hidden, Tensor(np.array([0.0, 0.0, 50.0])))
    assert np.allclose(prompt.values, [[2.0, 2.0]])
    with pytest.raises(DecoderShapeError):
        aggregate_group(Tensor(np.zeros((2, 2))), Tensor(np.zeros(3)))


@pytest.mark.mask_decoder
def test_bilinear_upsampling():
    coarse = Tensor(np.array([[0.0, 1.0], [2.0, 3.0]]))
    up = upsample_bilinear(coarse, (4, 4)).values
    assert up.shape == (4, 4)
    # Corners are aligned, the interior interpolates linearly
    assert np.allclose(up[[0, 0, 3, 3], [0, 3, 0, 3]], [0.0, 1.0, 2.0, 3.0])
    assert np.allclose(up[0], [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])
    # A constant map stays constant
    assert np.allclose(upsample_bilinear(Tensor(np.ones((2, 2))), (4, 4)).values, 1.0)
    assert np.array_equal(propagate_bias(coarse, (4, 4)).values, up)
    with pytest.raises(DecoderShapeError):
        upsample_bilinear(coarse, (3, 4))


@pytest.mark.mask_decoder
def test_scale_fusion():
    coarse = Tensor(np.zeros((2, 2)))
    fine = Tensor(np.ones((4, 4)))
    fused = combine_scales((coarse, fine), Tensor(np.zeros(2))).values
    assert np.allclose(fused, 0.5)
    fused = combine_scales((coarse, fine), Tensor(np.array([-50.0, 50.0]))).values
    assert np.allclose(fused, 1.0)
    with pytest.raises(DecoderShapeError):
        combine_scales((coarse,), Tensor(np.zeros(2)))


@pytest.mark.mask_decoder
def test_decode_scale_bias_shape_checked():
    decoder = MaskDecoder(6, 5, 1, np.random.default_rng(0))
    pyramid = _pyramid()
    prompt = aggregate_group(_groups()[0], decoder.group_weights[0])
    score = decode_scale(
        prompt, pyramid.coarse, decoder.prompt_proj[0], decoder.heads[0][0]
    )
    assert score.shape == (2, 2)
    with pytest.raises(DecoderShapeError):
        decode_scale(
            prompt,
            pyramid.fine,
            decoder.prompt_proj[1],
            decoder.heads[1][0],
            attn_bias=Tensor(np.zeros((2, 2))),
        )


@pytest.mark.mask_decoder
def test_predict_mask_shapes_and_channels():
    decoder = MaskDecoder(6, 5, 3, np.random.default_rng(0))
    output = predict_mask(decoder, _groups(), _pyramid())
    assert output.logits.shape == (3, 4, 4)
    assert output.n_channels == 3
    assert len(output.coarse_maps) == 3
    assert output.coarse_maps[0].shape == (2, 2)
    assert output.fine_maps[0].shape == (4, 4)
    probs = output.probabilities()
    assert np.all((probs > 0.0) & (probs < 1.0))

    assert predict_mask(decoder, _groups(), _pyramid(), C=1).logits.shape == (1, 4, 4)
    with pytest.raises(DecoderShapeError):
        predict_mask(decoder, _groups(), _pyramid(), C=4)
    with pytest.raises(DecoderShapeError):
        predict_mask(decoder, _groups(), _pyramid(depth=4))
    with pytest.raises(DecoderShapeError):
        predict_mask(decoder, _groups()[:1], _pyramid())


@pytest.mark.mask_decoder
def test_coarse_map_biases_fine_scale():
    """
    The fine score map depends on the coarse map through the attention bias
    """
    decoder = MaskDecoder(6, 5, 1, np.random.default_rng(2))
    pyramid = _pyramid(seed=3)
    groups = _groups(seed=4)
    before = predict_mask(decoder, groups, pyramid).fine_maps[0].values
    decoder.heads[0][0].weight.values = decoder.heads[0][0].weight.values * 3.0
    after = predict_mask(decoder, groups, pyramid).fine_maps[0].values
    assert not np.allclose(before, after)


@pytest.mark.mask_decoder
def test_decoder_gradients():
    decoder = MaskDecoder(6, 5, 2, np.random.default_rng(5))
    decoder.group_weights[0].values = np.array([0.3, -0.2, 0.1])
    decoder.fusion_weights.values = np.array([0.4, -0.1])
    pyramid = _pyramid(seed=6)
    groups = _groups(seed=7)
    weights = Tensor(np.random.default_rng(8).normal(size=(2, 4, 4)))

    report = finite_diff_check(
        lambda: sum(mul(predict_mask(decoder, groups, pyramid).logits, weights)),
        decoder.parameters(),
        max_entries=4,
    )
    assert report.passed, report.to_records()
