from dataclasses import dataclass, field

import numpy as np

from ..errors import MdbertError, ShapeError
from .tensor import Tensor


def make_rng(seed):
    """PCG64 generator; the stream is identical on every platform for a given seed."""
    return np.random.Generator(np.random.PCG64(seed))


def truncated_normal(rng, shape, std=0.02, dtype=np.float32, bound=2.0):
    """Normal(0, std) samples redrawn until they fall within ``bound`` standard deviations."""
    z = rng.standard_normal(shape)
    bad = np.abs(z) > bound
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > bound
    return (z * std).astype(dtype)


class ParamStore:
    """Named trainable tensors in insertion order, plus a set of frozen name prefixes."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params = {}
        self.frozen = set()

    def add(self, name, value):
        if name in self._params:
            raise MdbertError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=self.dtype), requires_grad=not self.is_frozen(name))
        t.op = name
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def is_frozen(self, name):
        return any(name.startswith(p) for p in self.frozen)

    def set_frozen(self, prefixes):
        """Replace the frozen prefix set; frozen tensors stop receiving gradients."""
        self.frozen = set(prefixes)
        for name, t in self._params.items():
            t.requires_grad = not self.is_frozen(name)
            if not t.requires_grad:
                t.grad = None

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def num_parameters(self):
        return int(sum(t.data.size for t in self._params.values()))

    def state_dict(self):
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state_dict(self, state):
        missing = set(self._params) - set(state)
        if missing:
            raise MdbertError(f"state is missing parameters: {sorted(missing)}")
        for name, t in self._params.items():
            value = np.asarray(state[name])
            if value.shape != t.shape:
                raise ShapeError(f"{name}: expected shape {t.shape}, got {value.shape}")
            t.data = value.astype(self.dtype, copy=True)

    def astype(self, dtype):
        out = ParamStore(dtype)
        out.frozen = set(self.frozen)
        for name, t in self._params.items():
            out.add(name, t.data)
        return out


@dataclass
class AdamWState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params, state):
    """One AdamW update over every non-frozen parameter, then clear gradients.

    Weight decay is decoupled: the parameter itself shrinks by ``lr * wd``
    before the Adam step, independent of the gradient.
    """
    todo = [(name, t) for name, t in params.items() if not params.is_frozen(name)]
    for name, t in todo:
        if t.grad is None:
            raise MdbertError(f"no gradient for trainable parameter {name!r}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, t in todo:
        g = t.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if state.weight_decay:
            t.data *= 1.0 - state.lr * state.weight_decay
        t.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    params.zero_grad()
    return params
