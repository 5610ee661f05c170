import numpy as np

from ..tensor_core import Parameter, Tensor


class ModelComponent:
    """
    Base class of all model parts. It inherits parameter bookkeeping to the
    adapter layers, compressors, the language model and the mask decoder.

    Parameters are discovered from the instance attributes, in attribute order:

    - a :class:`Parameter` attribute is a parameter of the component
    - a ModelComponent attribute is a child; its parameters are prefixed with
      the attribute name
    - lists and tuples of parameters or components are walked with their index
      as part of the name

    Parameter names are assigned by :func:`named_parameters`, so a parameter is
    known by its path in the component tree (e.g. ``blocks.0.attn_q.A``).
    """

    def named_parameters(self, prefix: str = "") -> list:
        """
        Returns all (name, parameter) pairs of the component tree in a fixed
        order and updates the parameter names accordingly

        :param str prefix: name prefix of this component
        :return: list of (name, Parameter)
        :rtype: list
        """
        found = []
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            found.extend(_walk(value, prefix + attr))
        for name, param in found:
            param.name = name
        return found

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list:
        return [p for p in self.parameters() if not p.frozen]

    def frozen_parameters(self) -> list:
        return [p for p in self.parameters() if p.frozen]

    def components(self) -> list:
        """
        Returns all components of the tree (including self), depth first
        """
        found = [self]
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            items = value if isinstance(value, (list, tuple)) else [value]
            for item in items:
                if isinstance(item, ModelComponent):
                    found.extend(item.components())
        return found

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict:
        """
        Returns copies of all parameter values keyed by name
        """
        return {name: p.values.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict, strict: bool = True):
        """
        Copies values from state into the parameters

        :param dict state: values keyed by parameter name
        :param bool strict: if True, missing or unexpected names raise a KeyError
        """
        params = dict(self.named_parameters())
        if strict:
            missing = sorted(set(params) - set(state))
            unexpected = sorted(set(state) - set(params))
            if missing or unexpected:
                raise KeyError(
                    f"State does not match the component: missing {missing}, "
                    f"unexpected {unexpected}"
                )
        for name, values in state.items():
            if name not in params:
                continue
            values = np.asarray(values, dtype=np.float64)
            if values.shape != params[name].shape:
                raise ValueError(
                    f"Shape of '{name}' is {params[name].shape}, state holds "
                    f"{values.shape}"
                )
            params[name].values = values.copy()


def _walk(value, name: str) -> list:
    if isinstance(value, Parameter):
        return [(name, value)]
    if isinstance(value, ModelComponent):
        return value.named_parameters(prefix=name + ".")
    if isinstance(value, (list, tuple)):
        found = []
        for i, item in enumerate(value):
            found.extend(_walk(item, f"{name}.{i}"))
        return found
    return []


class Linear(ModelComponent):
    """
    Trainable affine map x W^T + b, used where the model owns plain (not
    adapted) layers: compressor MLPs and mask-decoder projections
    """

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        rng: np.random.Generator,
        bias: bool = True,
        init_std: float = None,
        frozen: bool = False,
    ):
        """
        Constructor

        :param int in_dim: input width
        :param int out_dim: output width
        :param np.random.Generator rng: generator for the initialization
        :param bool bias: adds a bias vector if True
        :param float init_std: standard deviation of the weights (default
            1/sqrt(in_dim))
        :param bool frozen: freezes the layer
        """
        if init_std is None:
            init_std = 1.0 / np.sqrt(in_dim)
        self.weight = Parameter(
            "weight", rng.normal(0.0, init_std, size=(out_dim, in_dim)), frozen=frozen
        )
        if bias:
            self.bias = Parameter("bias", np.zeros(out_dim), frozen=frozen)
        else:
            self.bias = None
        self.in_dim = in_dim
        self.out_dim = out_dim

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight.T
        if self.bias is not None:
            out = out + self.bias
        return out
