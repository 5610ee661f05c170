from .mask_decoder import (
    MaskDecoder,
    MaskOutput,
    VisualPyramid,
    DecoderShapeError,
    aggregate_group,
    decode_scale,
    propagate_bias,
    upsample_bilinear,
    combine_scales,
    predict_mask,
)
