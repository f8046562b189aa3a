"""Landmark-guided lipreading testbed.

Three lip-landmark graphs (contour, distance-aware, similarity-aware) feed
spatio-temporal graph-convolution branches whose outputs are fused with
frame-wise visual features, trained end-to-end on synthetic lip clips. Hot
kernels live in :mod:`lipgcn.kernels` (compiled core + numpy fallback).
"""

from .numerics import Tensor, backward, gradcheck, no_grad

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "gradcheck", "no_grad", "__version__"]
