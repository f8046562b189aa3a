"""Hot-loop kernels with a compiled core and a numpy fallback.

The backend is selected once at import: the Cython extension
(``lipgcn.kernels._core``) when it built, otherwise the vectorized numpy
implementation. ``LIPGCN_KERNELS=numpy|cython`` forces a choice, and
``use_backend`` switches at runtime (used by the tests and the benchmark).
"""

import os

from ..errors import ConfigError
from . import numpy_backend

_BACKENDS = {"numpy": numpy_backend}

try:
    from . import _core  # noqa: F401

    _BACKENDS["cython"] = _core
except ImportError:
    _core = None


def _initial_backend():
    requested = os.environ.get("LIPGCN_KERNELS", "auto").lower()
    if requested == "auto":
        return "cython" if "cython" in _BACKENDS else "numpy"
    if requested not in _BACKENDS:
        raise ConfigError(
            f"LIPGCN_KERNELS={requested!r} not available; "
            f"built backends: {sorted(_BACKENDS)}"
        )
    return requested


_ACTIVE = _initial_backend()


def available_backends():
    return sorted(_BACKENDS)


def backend_name():
    return _ACTIVE


def use_backend(name):
    """Switch the active kernel backend; returns the previous name."""
    global _ACTIVE
    if name not in _BACKENDS:
        raise ConfigError(f"unknown kernel backend {name!r}; built: {sorted(_BACKENDS)}")
    previous = _ACTIVE
    _ACTIVE = name
    return previous


def conv1d_forward(x, k, dilation):
    return _BACKENDS[_ACTIVE].conv1d_forward(x, k, dilation)


def conv1d_backward(g, x, k, dilation):
    return _BACKENDS[_ACTIVE].conv1d_backward(g, x, k, dilation)


def conv2d_forward(x, k, stride):
    return _BACKENDS[_ACTIVE].conv2d_forward(x, k, stride)


def conv2d_backward(g, x, k, stride):
    return _BACKENDS[_ACTIVE].conv2d_backward(g, x, k, stride)


def conv3d_forward(x, k):
    return _BACKENDS[_ACTIVE].conv3d_forward(x, k)


def conv3d_backward(g, x, k):
    return _BACKENDS[_ACTIVE].conv3d_backward(g, x, k)


def gru_forward(x, wx, wh, bx, bh):
    return _BACKENDS[_ACTIVE].gru_forward(x, wx, wh, bx, bh)


def gru_backward(g, x, wx, wh, cache):
    return _BACKENDS[_ACTIVE].gru_backward(g, x, wx, wh, cache)
