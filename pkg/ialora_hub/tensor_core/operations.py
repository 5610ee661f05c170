import math
import numpy as np
from scipy.special import expit

from .tensor import Tensor, DimensionError, active_tape

GELU_COEFF = math.sqrt(2.0 / math.pi)


def _lift(x) -> Tensor:
    """
    Wraps constants into tensors that do not require a gradient
    """
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """
    Sums a broadcast gradient back to the shape of the operand

    :param np.ndarray grad: gradient with the broadcast shape
    :param tuple shape: shape of the operand
    :return: gradient with the operand shape
    :rtype: np.ndarray
    """
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _result(values: np.ndarray, inputs: tuple, backward_rule) -> Tensor:
    """
    Creates the output tensor of an operation and records it if needed

    :param np.ndarray values: values of the result
    :param tuple inputs: input tensors
    :param backward_rule: callable mapping the output gradient to input gradients
    :return: output tensor
    :rtype: Tensor
    """
    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor(values, requires_grad=requires_grad)
    tape = active_tape()
    if requires_grad and tape is not None:
        tape.record(out, inputs, backward_rule)
    return out


def _broadcast_shapes(a: Tensor, b: Tensor, op_name: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(
            f"{op_name}: shapes {a.shape} and {b.shape} cannot be broadcast"
        )


# ELEMENTWISE ARITHMETIC
def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shapes(a, b, "add")

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.values + b.values, (a, b), rule)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shapes(a, b, "sub")

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.values - b.values, (a, b), rule)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shapes(a, b, "mul")

    def rule(g):
        return (
            _unbroadcast(g * b.values, a.shape),
            _unbroadcast(g * a.values, b.shape),
        )

    return _result(a.values * b.values, (a, b), rule)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shapes(a, b, "div")

    def rule(g):
        return (
            _unbroadcast(g / b.values, a.shape),
            _unbroadcast(-g * a.values / (b.values**2), b.shape),
        )

    return _result(a.values / b.values, (a, b), rule)


def neg(a) -> Tensor:
    a = _lift(a)
    return _result(-a.values, (a,), lambda g: (-g,))


# LINEAR ALGEBRA AND SHAPES
def matmul(a, b) -> Tensor:
    """
    Matrix product of a [m x k] and b [k x n]

    :param Tensor a: left operand
    :param Tensor b: right operand
    :return: product [m x n]
    :rtype: Tensor
    """
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul: cannot multiply shapes {a.shape} and {b.shape}"
        )

    def rule(g):
        grad_a = g @ b.values.T if a.requires_grad else None
        grad_b = a.values.T @ g if b.requires_grad else None
        return grad_a, grad_b

    return _result(a.values @ b.values, (a, b), rule)


def transpose(a) -> Tensor:
    a = _lift(a)
    return _result(a.values.T, (a,), lambda g: (g.T,))


def reshape(a, shape: tuple) -> Tensor:
    a = _lift(a)
    try:
        values = a.values.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {a.shape} into {shape}")
    return _result(values, (a,), lambda g: (g.reshape(a.shape),))


def index(a, key) -> Tensor:
    """
    Numpy-style indexing; the reverse rule scatters back with accumulation so
    repeated indices are handled
    """
    a = _lift(a)
    if isinstance(key, Tensor):
        key = key.values.astype(np.int64)
    values = a.values[key]

    def rule(g):
        grad = np.zeros_like(a.values)
        np.add.at(grad, key, g)
        return (grad,)

    return _result(np.array(values, dtype=np.float64), (a,), rule)


def concat(tensors: list, axis: int = 0) -> Tensor:
    """
    Concatenates tensors along axis

    :param list tensors: tensors with matching shapes apart from axis
    :param int axis: axis to concatenate along
    :return: concatenated tensor
    :rtype: Tensor
    """
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat: needs at least one tensor")
    try:
        values = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(
            f"concat: shapes {[t.shape for t in tensors]} do not match off axis {axis}"
        )
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def rule(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(values, tuple(tensors), rule)


# REDUCTIONS
def sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    values = np.sum(a.values, axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(values, (a,), rule)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    count = a.size if axis is None else a.shape[axis]
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


# NONLINEARITIES
def exp(a) -> Tensor:
    a = _lift(a)
    values = np.exp(a.values)
    return _result(values, (a,), lambda g: (g * values,))


def log(a) -> Tensor:
    a = _lift(a)
    return _result(np.log(a.values), (a,), lambda g: (g / a.values,))


def sigmoid(a) -> Tensor:
    a = _lift(a)
    values = expit(a.values)
    return _result(values, (a,), lambda g: (g * values * (1.0 - values),))


def softplus(a) -> Tensor:
    """
    log(1 + exp(a)) in the overflow-free form max(a, 0) + log1p(exp(-|a|))
    """
    a = _lift(a)
    values = np.maximum(a.values, 0.0) + np.log1p(np.exp(-np.abs(a.values)))
    return _result(values, (a,), lambda g: (g * expit(a.values),))


def tanh(a) -> Tensor:
    a = _lift(a)
    values = np.tanh(a.values)
    return _result(values, (a,), lambda g: (g * (1.0 - values**2),))


def gelu(a) -> Tensor:
    """
    Smooth GELU (tanh approximation)
    """
    a = _lift(a)
    x = a.values
    inner = GELU_COEFF * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    values = 0.5 * x * (1.0 + t)

    def rule(g):
        d_inner = GELU_COEFF * (1.0 + 3.0 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * d_inner),)

    return _result(values, (a,), rule)


def row_softmax(x) -> Tensor:
    """
    Softmax over the last axis with per-row max subtraction

    :param Tensor x: logits [L x n]
    :return: rows on the simplex [L x n]
    :rtype: Tensor
    """
    x = _lift(x)
    shifted = x.values - np.max(x.values, axis=-1, keepdims=True)
    e = np.exp(shifted)
    values = e / np.sum(e, axis=-1, keepdims=True)

    def rule(g):
        return (values * (g - np.sum(g * values, axis=-1, keepdims=True)),)

    return _result(values, (x,), rule)


def log_softmax(x) -> Tensor:
    """
    Log-softmax over the last axis (log-sum-exp with max subtraction)
    """
    x = _lift(x)
    shifted = x.values - np.max(x.values, axis=-1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    values = shifted - log_norm
    probs = np.exp(values)

    def rule(g):
        return (g - probs * np.sum(g, axis=-1, keepdims=True),)

    return _result(values, (x,), rule)


def layer_norm(x, eps: float = 1e-5) -> Tensor:
    """
    Normalizes the last axis to zero mean and unit variance (no affine part)
    """
    x = _lift(x)
    mu = np.mean(x.values, axis=-1, keepdims=True)
    centered = x.values - mu
    var = np.mean(centered**2, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std

    def rule(g):
        g_mean = np.mean(g, axis=-1, keepdims=True)
        gx_mean = np.mean(g * x_hat, axis=-1, keepdims=True)
        return (inv_std * (g - g_mean - x_hat * gx_mean),)

    return _result(x_hat, (x,), rule)


# ATTENTION
def scaled_dot_attention(q, k, v, bias=None, return_weights: bool = False):
    """
    softmax((q k^T) / sqrt(d) + bias) v

    :param Tensor q: queries [Lq x d]
    :param Tensor k: keys [Lk x d]
    :param Tensor v: values [Lk x dv]
    :param Tensor bias: optional additive attention-logit bias [Lq x Lk]
    :param bool return_weights: if True, the attention weights are returned too
    :return: attended values [Lq x dv] (and weights [Lq x Lk])
    """
    q, k, v = _lift(q), _lift(k), _lift(v)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise DimensionError(
            f"attention: expects 2-D operands, got {q.shape}, {k.shape}, {v.shape}"
        )
    if q.shape[1] != k.shape[1]:
        raise DimensionError(
            f"attention: query width {q.shape} does not match key width {k.shape}"
        )
    if k.shape[0] != v.shape[0]:
        raise DimensionError(
            f"attention: {k.shape[0]} keys but {v.shape[0]} values ({k.shape}, "
            f"{v.shape})"
        )
    scores = matmul(q, transpose(k)) * (1.0 / math.sqrt(q.shape[1]))
    if bias is not None:
        bias = _lift(bias)
        if bias.shape != (q.shape[0], k.shape[0]):
            raise DimensionError(
                f"attention: bias shape {bias.shape} does not match "
                f"{(q.shape[0], k.shape[0])}"
            )
        scores = add(scores, bias)
    weights = row_softmax(scores)
    out = matmul(weights, v)
    if return_weights:
        return out, weights
    return out


def causal_bias(length: int, masked_value: float = -1e9) -> Tensor:
    """
    Additive bias blocking attention to later positions

    :param int length: sequence length
    :param float masked_value: finite large negative value
    :return: constant tensor [length x length]
    :rtype: Tensor
    """
    upper = np.triu(np.ones((length, length), dtype=bool), k=1)
    return Tensor(np.where(upper, masked_value, 0.0))
