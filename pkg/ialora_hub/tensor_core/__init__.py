from .tensor import (
    Tensor,
    Parameter,
    Tape,
    TapeRecord,
    DimensionError,
    ContractError,
    recording,
    active_tape,
    backward,
)
from .operations import (
    add,
    sub,
    mul,
    div,
    neg,
    matmul,
    transpose,
    reshape,
    index,
    concat,
    sum,
    mean,
    exp,
    log,
    sigmoid,
    softplus,
    tanh,
    gelu,
    row_softmax,
    log_softmax,
    layer_norm,
    scaled_dot_attention,
    causal_bias,
)
from .optimization import cosine_warmup_lr, adamw_step, AdamW
from .gradient_check import (
    finite_diff_check,
    relative_error,
    GradientCheckReport,
    ParameterCheck,
)
