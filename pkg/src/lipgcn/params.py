"""Ordered registry of named, deterministically initialized parameters.

Creation order is fixed by model construction, so a (config, seed) pair
always produces the same parameter names, shapes, and values — the property
the checkpoint format and the determinism tests rely on.
"""

import math

import numpy as np

from .errors import CheckpointError
from .numerics import Tensor


class ParamRegistry:
    def __init__(self, seed):
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self._params = {}

    def _add(self, name, data, init_note):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = (t, init_note)
        return t

    def zeros(self, name, shape):
        return self._add(name, np.zeros(shape), "zeros")

    def normal(self, name, shape, std):
        return self._add(name, self.rng.standard_normal(shape) * std, f"normal(std={std:g})")

    def uniform(self, name, shape, bound):
        return self._add(name, self.rng.uniform(-bound, bound, size=shape), f"uniform(±{bound:g})")

    def he_normal(self, name, shape):
        """Conv/linear init for relu paths; fan-in over all non-output dims."""
        fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else int(shape[0])
        return self.normal(name, shape, math.sqrt(2.0 / fan_in))

    def xavier_normal(self, name, shape):
        fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else int(shape[0])
        return self.normal(name, shape, math.sqrt(1.0 / fan_in))

    def lecun_uniform(self, name, shape, fan_in):
        return self.uniform(name, shape, 1.0 / math.sqrt(fan_in))

    # -- access ------------------------------------------------------------

    def items(self):
        return [(name, t) for name, (t, _) in self._params.items()]

    def tensors(self):
        return [t for t, _ in self._params.values()]

    def names(self):
        return list(self._params)

    def init_metadata(self):
        return {name: {"shape": list(t.shape), "init": note}
                for name, (t, note) in self._params.items()}

    def total_size(self):
        return sum(t.size for t, _ in self._params.values())

    def state_arrays(self):
        return {name: t.data.copy() for name, (t, _) in self._params.items()}

    def load_state_arrays(self, arrays):
        missing = [n for n in self._params if n not in arrays]
        unexpected = [n for n in arrays if n not in self._params]
        if missing or unexpected:
            raise CheckpointError(
                f"parameter mismatch: missing {missing or 'none'}, unexpected {unexpected or 'none'}"
            )
        for name, (t, _) in self._params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise CheckpointError(
                    f"parameter {name!r}: checkpoint shape {arr.shape} != model shape {t.data.shape}"
                )
            t.data = np.ascontiguousarray(arr)

    def zero_grad(self):
        for t, _ in self._params.values():
            t.grad = None
