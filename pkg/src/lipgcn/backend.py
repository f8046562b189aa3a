"""Temporal aggregation, classification head, loss, and evaluation metrics.

The aggregator is a residual dilated temporal-conv stack standing in for a
densely connected TCN: same dilation/receptive-field behavior, desk-scale
parameter count. Metrics follow the two accuracy definitions used for
speaker-labelled evaluation: overall Acc and the unweighted per-speaker
mean mAcc.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, UsageError
from .numerics import Tensor
from .numerics import ops


@dataclass
class BackendConfig:
    dilations: tuple = (1, 2, 4)
    kernel: int = 3
    classes: int = 10
    smoothing: float = 0.1
    hidden: int = 64

    def __post_init__(self):
        self.dilations = tuple(self.dilations)
        if any(d2 <= d1 for d1, d2 in zip(self.dilations, self.dilations[1:])):
            raise ConfigError(f"dilations must be strictly increasing, got {self.dilations}")
        if self.kernel % 2 == 0:
            raise ConfigError(f"temporal kernel must be odd, got {self.kernel}")
        if not (0.0 <= self.smoothing < 1.0):
            raise ConfigError(f"label smoothing must be in [0,1), got {self.smoothing}")
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")


class TCNBlock:
    """y = x + relu(dilated_conv(x)); T preserved."""

    def __init__(self, dim, kernel, dilation, registry, prefix):
        self.dilation = dilation
        self.kernel = registry.he_normal(f"{prefix}.kernel", (dim, dim, kernel))
        self.bias = registry.zeros(f"{prefix}.bias", (dim,))

    def __call__(self, x):
        B, T, D = x.shape
        if self.dilation >= T:
            warnings.warn(
                f"TCN dilation {self.dilation} >= sequence length {T}; "
                "the dilated taps only see zero padding",
                stacklevel=2,
            )
        c = ops.transpose(x, (0, 2, 1))
        c = ops.conv1d_temporal(c, self.kernel, dilation=self.dilation)
        c = ops.add(c, ops.reshape(self.bias, (1, D, 1)))
        return ops.add(x, ops.relu(ops.transpose(c, (0, 2, 1))))


class TemporalAggregator:
    def __init__(self, dim, cfg, registry, prefix="backend"):
        self.blocks = [TCNBlock(dim, cfg.kernel, d, registry, f"{prefix}.block{i}")
                       for i, d in enumerate(cfg.dilations)]

    def __call__(self, seq):
        for block in self.blocks:
            seq = block(seq)
        return seq


def aggregate(seq, aggregator):
    return aggregator(seq)


class ClassifierHead:
    """Mean pooling over frames, then a 2-layer MLP to class logits."""

    def __init__(self, dim, hidden, classes, registry, prefix="head"):
        self.w1 = registry.lecun_uniform(f"{prefix}.w1", (dim, hidden), fan_in=dim)
        self.b1 = registry.zeros(f"{prefix}.b1", (hidden,))
        self.w2 = registry.lecun_uniform(f"{prefix}.w2", (hidden, classes), fan_in=hidden)
        self.b2 = registry.zeros(f"{prefix}.b2", (classes,))

    def __call__(self, seq):
        pooled = ops.mean(seq, axis=1)
        h = ops.relu(ops.linear(pooled, self.w1, self.b1))
        return ops.linear(h, self.w2, self.b2)


def pool_and_classify(seq, head):
    return head(seq)


def label_smoothed_ce(logits, labels, smoothing):
    """Mean over the batch of the smoothed negative log-likelihood:
    -[(1-eps)*log p_true + eps/(C-1) * sum_{i != true} log p_i].

    With smoothing 0 this is plain cross entropy.
    """
    if not isinstance(logits, Tensor):
        logits = Tensor(logits)
    B, C = logits.shape
    if C < 2:
        raise ConfigError(f"need at least 2 classes, got {C}")
    if not (0.0 <= smoothing < 1.0):
        raise ConfigError(f"label smoothing must be in [0,1), got {smoothing}")
    y = np.asarray(labels)
    if y.shape != (B,):
        raise DataError(f"labels shape {y.shape} does not match batch {B}")
    if (y < 0).any() or (y >= C).any():
        raise DataError(f"label out of range [0,{C}): {y.min()}..{y.max()}")
    weights = np.full((B, C), smoothing / (C - 1))
    weights[np.arange(B), y] = 1.0 - smoothing
    lp = ops.log_softmax(logits, axis=1)
    per_sample = ops.sum_(ops.mul(lp, Tensor(weights)), axis=1)
    return ops.neg(ops.mean(per_sample))


@dataclass
class EvalRecord:
    clip_id: str
    speaker_id: str
    y_true: int
    y_pred: int


def accuracy(records):
    """Fraction of exact label matches."""
    if not records:
        raise UsageError("accuracy of an empty record list is undefined")
    return sum(r.y_pred == r.y_true for r in records) / len(records)


def mean_accuracy(records):
    """Unweighted mean over speakers of per-speaker accuracy."""
    if not records:
        raise UsageError("mean accuracy of an empty record list is undefined")
    groups = {}
    for r in records:
        groups.setdefault(r.speaker_id, []).append(r)
    return sum(accuracy(g) for g in groups.values()) / len(groups)


def per_speaker_stats(records):
    stats = {}
    for r in records:
        s = stats.setdefault(r.speaker_id, {"n": 0, "correct": 0})
        s["n"] += 1
        s["correct"] += int(r.y_pred == r.y_true)
    for s in stats.values():
        s["acc"] = s["correct"] / s["n"]
    return stats
