import contextlib
import numpy as np

import logging

log = logging.getLogger(__name__)


class DimensionError(ValueError):
    """
    Raised when the shapes of the operands of an operation do not fit
    """


class ContractError(RuntimeError):
    """
    Raised when an operation is called in a state it does not support
    """


_ACTIVE_TAPES = []


def _as_array(values) -> np.ndarray:
    """
    Converts values to a float64 array (copies python scalars and lists)

    :param values: array-like
    :return: float64 numpy array
    :rtype: np.ndarray
    """
    return np.asarray(values, dtype=np.float64)


class Tensor:
    """
    Dense real array with an optional gradient.

    Values are stored as a row-major float64 numpy array. Operations on tensors
    that require a gradient are recorded on the currently active :class:`Tape`
    (see :func:`recording`). Outside of a recording context no records are made,
    which is how inference runs.

    :param np.ndarray values: values of the tensor
    :param bool requires_grad: whether gradients are computed for the tensor
    :param np.ndarray, None grad: gradient, same shape as values once populated
    """

    __array_priority__ = 100

    def __init__(self, values, requires_grad: bool = False):
        """
        Constructor

        :param values: array-like values
        :param bool requires_grad: whether gradients are computed for the tensor
        """
        self.values = _as_array(values)
        if self.values.ndim == 0:
            self.values = self.values.reshape(())
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def T(self):
        from .operations import transpose

        return transpose(self)

    def item(self) -> float:
        """
        Returns the value of a scalar (single entry) tensor
        """
        if self.values.size != 1:
            raise ContractError(
                f"item() needs a single-entry tensor, got shape {self.shape}"
            )
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """
        Returns a copy of the values
        """
        return self.values.copy()

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, grad: np.ndarray):
        """
        Adds grad to the gradient of the tensor

        :param np.ndarray grad: gradient contribution, same shape as the tensor
        """
        if grad.shape != self.values.shape:
            raise DimensionError(
                f"Gradient of shape {grad.shape} does not fit tensor of shape "
                f"{self.values.shape}"
            )
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad = self.grad + grad

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Arithmetic is implemented in operations.py
    def __add__(self, other):
        from .operations import add

        return add(self, other)

    def __radd__(self, other):
        from .operations import add

        return add(other, self)

    def __sub__(self, other):
        from .operations import sub

        return sub(self, other)

    def __rsub__(self, other):
        from .operations import sub

        return sub(other, self)

    def __mul__(self, other):
        from .operations import mul

        return mul(self, other)

    def __rmul__(self, other):
        from .operations import mul

        return mul(other, self)

    def __truediv__(self, other):
        from .operations import div

        return div(self, other)

    def __neg__(self):
        from .operations import neg

        return neg(self)

    def __matmul__(self, other):
        from .operations import matmul

        return matmul(self, other)

    def __getitem__(self, key):
        from .operations import index

        return index(self, key)


class Parameter(Tensor):
    """
    Named tensor owned by a model component.

    Frozen parameters still receive gradients during the reverse pass, the
    optimizer never changes them.

    :param str name: name of the parameter
    :param bool frozen: True for pre-trained, fixed weights
    """

    def __init__(self, name: str, values, frozen: bool = False):
        """
        Constructor

        :param str name: name of the parameter
        :param values: array-like values
        :param bool frozen: True if the optimizer must not update the parameter
        """
        super().__init__(values, requires_grad=True)
        # Own the buffer, gradient checks perturb it in place
        self.values = np.array(self.values, dtype=np.float64, copy=True)
        self.name = name
        self.frozen = frozen

    @property
    def tensor(self) -> Tensor:
        return self

    def __repr__(self):
        return (
            f"Parameter(name={self.name!r}, shape={self.shape}, "
            f"frozen={self.frozen})"
        )


class TapeRecord:
    """
    One performed operation: its output, its inputs and the reverse rule

    The reverse rule maps the gradient of the output to a tuple of gradients,
    one per input (None for inputs that do not require a gradient).
    """

    __slots__ = ("output", "inputs", "backward_rule")

    def __init__(self, output: Tensor, inputs: tuple, backward_rule):
        self.output = output
        self.inputs = inputs
        self.backward_rule = backward_rule


class Tape:
    """
    Ordered record of the operations performed while the tape is active.

    Records are appended in execution order, so every input of a record is
    either a leaf or the output of an earlier record. A tape belongs to a single
    computation and must not be shared between threads.
    """

    def __init__(self):
        """
        Constructor
        """
        self.records = []
        self._consumed = False

    def __len__(self):
        return len(self.records)

    def record(self, output: Tensor, inputs: tuple, backward_rule):
        """
        Appends an operation to the tape

        :param Tensor output: result of the operation
        :param tuple inputs: tensors the operation read
        :param backward_rule: callable mapping output gradient to input gradients
        """
        self.records.append(TapeRecord(output, inputs, backward_rule))

    def backward(self, loss: Tensor):
        """
        Runs the reverse pass from a scalar loss

        Gradients are accumulated in the ``grad`` fields of all reachable tensors
        that require a gradient. Every record is visited exactly once, in reverse
        order.

        :param Tensor loss: scalar tensor produced on this tape
        """
        if loss.values.size != 1:
            raise ContractError(
                f"backward() needs a scalar loss, got shape {loss.shape}"
            )
        if self._consumed:
            raise ContractError("The tape has already been used for a reverse pass")

        grads = {id(loss): np.ones_like(loss.values)}
        for record in reversed(self.records):
            out_grad = grads.pop(id(record.output), None)
            if out_grad is None:
                continue
            in_grads = record.backward_rule(out_grad)
            for tensor, grad in zip(record.inputs, in_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad

        # Remaining entries belong to leaves
        leaves = {}
        for record in self.records:
            for tensor in record.inputs:
                if id(tensor) in grads:
                    leaves[id(tensor)] = tensor
        if id(loss) in grads:
            leaves[id(loss)] = loss
        for key, tensor in leaves.items():
            tensor.accumulate_grad(grads[key])
        self._consumed = True


@contextlib.contextmanager
def recording():
    """
    Context manager activating a fresh :class:`Tape`

    .. code-block:: python

        with recording() as tape:
            loss = model_loss(...)
        tape.backward(loss)
    """
    tape = Tape()
    _ACTIVE_TAPES.append(tape)
    try:
        yield tape
    finally:
        _ACTIVE_TAPES.pop()


def active_tape():
    """
    Returns the tape currently recording or None
    """
    if _ACTIVE_TAPES:
        return _ACTIVE_TAPES[-1]
    return None


def backward(loss: Tensor, tape: Tape = None):
    """
    Populates gradients of all tensors reachable from loss

    :param Tensor loss: scalar loss
    :param Tape tape: tape the loss was produced on (defaults to the active tape)
    """
    if tape is None:
        tape = active_tape()
    if tape is None:
        raise ContractError(
            "No tape available: compute the loss inside a recording() context"
        )
    tape.backward(loss)
