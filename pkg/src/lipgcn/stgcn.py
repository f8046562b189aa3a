"""Spatio-temporal graph convolution branches over landmark node features.

Each branch stacks temporal-conv / spatial-graph-conv / temporal-conv layers
with identity residuals (channel width is constant inside a branch), pools
over nodes, and closes with a bidirectional GRU whose concatenated hidden
states give one vector per frame.
"""

import math
from dataclasses import dataclass

from .errors import DimensionError, UsageError
from .graphs import AdjacencyMatrix
from .numerics import Tensor
from .numerics import ops

_ACTIVATIONS = {
    "relu": ops.relu,
    "tanh": ops.tanh,
    "identity": lambda x: x,
}


def sgc(f, m, w, activation="relu"):
    """Spatial graph convolution: activation(M @ f_t @ W) applied per frame.

    f [B,N,T,C]; m is an AdjacencyMatrix, an [N,N] tensor shared across the
    batch, or a per-clip [B,N,N] tensor; w [C,C]. Time-distributed: the same
    adjacency and weight act at every t.
    """
    if isinstance(m, AdjacencyMatrix):
        if not m.normalized:
            raise UsageError(f"sgc needs a normalized adjacency, got raw {m.kind}")
        m = m.weights
    elif not isinstance(m, Tensor):
        m = Tensor(m)
    if not isinstance(f, Tensor):
        f = Tensor(f)
    B, N, T, C = f.shape
    if m.shape[-2:] != (N, N):
        raise DimensionError(f"adjacency {m.shape} does not match {N} nodes")
    act = _ACTIVATIONS[activation]
    agg = ops.matmul(m, ops.reshape(f, (B, N, T * C)))
    out = ops.matmul(ops.reshape(agg, (B, N, T, C)), w)
    return act(out)


class TemporalConv:
    """Per-node 1-D temporal convolution on [B,N,T,C]; T preserved."""

    def __init__(self, channels, registry, prefix, kernel=3, dilation=1):
        self.channels = channels
        self.dilation = dilation
        self.kernel = registry.he_normal(f"{prefix}.kernel", (channels, channels, kernel))
        self.bias = registry.zeros(f"{prefix}.bias", (channels,))

    def __call__(self, f):
        B, N, T, C = f.shape
        x = ops.reshape(ops.transpose(f, (0, 1, 3, 2)), (B * N, C, T))
        y = ops.conv1d_temporal(x, self.kernel, dilation=self.dilation)
        y = ops.add(y, ops.reshape(self.bias, (1, C, 1)))
        return ops.transpose(ops.reshape(y, (B, N, C, T)), (0, 1, 3, 2))


class STGCNLayer:
    """TC -> SGC -> TC sandwich with an identity residual connection."""

    def __init__(self, channels, registry, prefix, kernel=3, activation="relu"):
        self.tc1 = TemporalConv(channels, registry, f"{prefix}.tc1", kernel)
        self.tc2 = TemporalConv(channels, registry, f"{prefix}.tc2", kernel)
        bound = math.sqrt(3.0 / channels)
        self.w = registry.uniform(f"{prefix}.sgc.w", (channels, channels), bound)
        self.activation = activation

    def __call__(self, f, m):
        h = self.tc1(f)
        h = sgc(h, m, self.w, activation=self.activation)
        h = self.tc2(h)
        return ops.add(h, f)


def stgcn_layer(f, m, layer):
    """Functional view of one spatio-temporal layer (params in ``layer``)."""
    return layer(f, m)


class GRUDirection:
    def __init__(self, in_dim, hidden, registry, prefix):
        bound = 1.0 / math.sqrt(hidden)
        self.wx = registry.uniform(f"{prefix}.wx", (in_dim, 3 * hidden), bound)
        self.wh = registry.uniform(f"{prefix}.wh", (hidden, 3 * hidden), bound)
        self.bx = registry.zeros(f"{prefix}.bx", (3 * hidden,))
        self.bh = registry.zeros(f"{prefix}.bh", (3 * hidden,))

    def __call__(self, seq):
        return ops.gru_sequence(seq, self.wx, self.wh, self.bx, self.bh)


class BiGRU:
    """Concatenated forward-time and reverse-time GRU hidden sequences."""

    def __init__(self, in_dim, hidden, registry, prefix):
        self.hidden = hidden
        self.fwd = GRUDirection(in_dim, hidden, registry, f"{prefix}.fwd")
        self.bwd = GRUDirection(in_dim, hidden, registry, f"{prefix}.bwd")

    def __call__(self, seq):
        forward = self.fwd(seq)
        backward = ops.flip(self.bwd(ops.flip(seq, axis=1)), axis=1)
        return ops.concat([forward, backward], axis=2)


def bigru(seq, gru):
    return gru(seq)


@dataclass
class GraphBranch:
    """One graph's processing stack; ``graph`` may be None when the adjacency
    is built per clip and passed to :func:`run_branch` directly."""

    name: str
    layers: list
    gru: BiGRU
    out_dim: int
    graph: AdjacencyMatrix = None


def make_branch(name, channels, out_dim, registry, n_layers=2, graph=None,
                activation="relu"):
    if out_dim % 2 != 0:
        raise DimensionError(f"branch out_dim must be even for a BiGRU, got {out_dim}")
    prefix = f"branch.{name}"
    layers = [STGCNLayer(channels, registry, f"{prefix}.layer{i}", activation=activation)
              for i in range(n_layers)]
    gru = BiGRU(channels, out_dim // 2, registry, f"{prefix}.gru")
    return GraphBranch(name=name, layers=layers, gru=gru, out_dim=out_dim, graph=graph)


def run_branch(f_node, branch, adjacency=None):
    """[B,N,T,C] node features -> [B,T,out_dim] per-frame branch features."""
    m = adjacency if adjacency is not None else branch.graph
    if m is None:
        raise UsageError(f"branch {branch.name!r} has no adjacency")
    h = f_node if isinstance(f_node, Tensor) else Tensor(f_node)
    for layer in branch.layers:
        h = layer(h, m)
    pooled = ops.mean(h, axis=1)
    return branch.gru(pooled)
