"""Fusion of graph-branch features with each other and with visual features.

Modes mirror the ablation grid: pairwise/tripartite concatenation with a
learned channel reduction, parameter-free point-wise addition, a per-frame
softmax-routed weighted sum, and the composite sum(f_lcg, cat(f_dag, f_sag)).
"""

from dataclasses import dataclass, field

from .errors import ConfigError, DimensionError
from .numerics import Tensor
from .numerics import ops

FUSION_MODES = ("cat2", "sum2", "cat3", "wsum3", "composite")


@dataclass
class FusionSpec:
    mode: str
    operands: tuple
    reduce_dim: int

    def __post_init__(self):
        if self.mode not in FUSION_MODES:
            raise ConfigError(f"unknown fusion mode {self.mode!r}; have {FUSION_MODES}")
        arity = {"cat2": 2, "sum2": 2, "cat3": 3, "wsum3": 3, "composite": 3}
        if len(self.operands) != arity[self.mode]:
            raise ConfigError(
                f"fusion mode {self.mode!r} needs {arity[self.mode]} operands, "
                f"got {tuple(self.operands)}"
            )


def _check_bt(features):
    head = features[0].shape[:2]
    for f in features[1:]:
        if f.shape[:2] != head:
            raise DimensionError(
                f"fusion operands disagree on [B,T]: {[f.shape for f in features]}"
            )


class CatReduce:
    """Channel concatenation followed by a learned linear reduction."""

    def __init__(self, in_dims, out_dim, registry, prefix):
        total = sum(in_dims)
        self.w = registry.lecun_uniform(f"{prefix}.w", (total, out_dim), fan_in=total)
        self.b = registry.zeros(f"{prefix}.b", (out_dim,))

    @property
    def param_count(self):
        return self.w.size + self.b.size


def fuse_cat(features, reduce):
    """Concatenate >=2 [B,T,D_i] features and reduce channels to D."""
    if len(features) < 2:
        raise DimensionError("fuse_cat needs at least two operands")
    _check_bt(features)
    return ops.linear(ops.concat(list(features), axis=2), reduce.w, reduce.b)


def fuse_sum(features):
    """Point-wise addition; no parameters."""
    _check_bt(features)
    head = features[0].shape
    for f in features[1:]:
        if f.shape != head:
            raise DimensionError(f"fuse_sum needs equal shapes, got {[f.shape for f in features]}")
    out = features[0]
    for f in features[1:]:
        out = ops.add(out, f)
    return out


class WsumRouter:
    """Per-frame routing network: concat -> hidden layer -> softmax over 3."""

    def __init__(self, dim, registry, prefix):
        self.w1 = registry.lecun_uniform(f"{prefix}.w1", (3 * dim, dim), fan_in=3 * dim)
        self.b1 = registry.zeros(f"{prefix}.b1", (dim,))
        self.w2 = registry.zeros(f"{prefix}.w2", (dim, 3))
        self.b2 = registry.zeros(f"{prefix}.b2", (3,))

    @property
    def param_count(self):
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size

    def weights(self, features):
        x = ops.concat(list(features), axis=2)
        h = ops.relu(ops.linear(x, self.w1, self.b1))
        return ops.softmax(ops.linear(h, self.w2, self.b2), axis=2)


def fuse_wsum(features, router):
    """Mixture-of-experts style weighted sum: out = sum_k w_k * f_k with
    per-frame simplex weights from the router."""
    if len(features) != 3:
        raise DimensionError(f"fuse_wsum takes exactly three operands, got {len(features)}")
    _check_bt(features)
    w = router.weights(features)
    out = None
    for k, f in enumerate(features):
        piece = ops.mul(ops.narrow(w, axis=2, start=k, length=1), f)
        out = piece if out is None else ops.add(out, piece)
    return out


def fuse_composite(f_lcg, f_dag, f_sag, reduce):
    """sum(f_lcg, cat(f_dag, f_sag)): DAG/SAG concatenated-and-reduced first,
    then point-wise added to the LCG feature."""
    return fuse_sum([f_lcg, fuse_cat([f_dag, f_sag], reduce)])


def merge_with_visual(f_graph, f_v):
    """Final fusion level: point-wise addition of graph and visual features."""
    if f_graph.shape != f_v.shape:
        raise DimensionError(
            f"graph feature {f_graph.shape} does not match visual feature {f_v.shape}"
        )
    return ops.add(f_graph, f_v)


class FusionModule:
    """Mode-dispatching fusion over named branch features."""

    def __init__(self, spec, registry, prefix="fusion"):
        self.spec = spec
        self.reduce = None
        self.router = None
        d = spec.reduce_dim
        if spec.mode in ("cat2", "cat3"):
            self.reduce = CatReduce([d] * len(spec.operands), d, registry, f"{prefix}.cat")
        elif spec.mode == "composite":
            self.reduce = CatReduce([d, d], d, registry, f"{prefix}.cat")
        elif spec.mode == "wsum3":
            self.router = WsumRouter(d, registry, f"{prefix}.router")

    @property
    def extra_param_count(self):
        if self.reduce is not None:
            return self.reduce.param_count
        if self.router is not None:
            return self.router.param_count
        return 0

    def __call__(self, named_features):
        feats = []
        for name in self.spec.operands:
            if name not in named_features:
                raise ConfigError(f"fusion operand {name!r} not among {sorted(named_features)}")
            feats.append(named_features[name])
        mode = self.spec.mode
        if mode in ("cat2", "cat3"):
            return fuse_cat(feats, self.reduce)
        if mode == "sum2":
            return fuse_sum(feats)
        if mode == "wsum3":
            return fuse_wsum(feats, self.router)
        # composite: operand order is (lcg, dag, sag)
        return fuse_composite(feats[0], feats[1], feats[2], self.reduce)
