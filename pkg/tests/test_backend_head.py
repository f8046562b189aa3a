"""Backend: TCN aggregation, classification head, loss equation, metrics."""

import math

import numpy as np
import pytest

from lipgcn.backend import (BackendConfig, ClassifierHead, EvalRecord, TCNBlock,
                            TemporalAggregator, accuracy, label_smoothed_ce,
                            mean_accuracy, per_speaker_stats)
from lipgcn.errors import ConfigError, DataError, UsageError
from lipgcn.numerics import Tensor, gradcheck_many, no_grad, ops
from lipgcn.params import ParamRegistry


def test_backend_config_validation():
    with pytest.raises(ConfigError):
        BackendConfig(dilations=(1, 2, 2))
    with pytest.raises(ConfigError):
        BackendConfig(kernel=4)
    with pytest.raises(ConfigError):
        BackendConfig(smoothing=1.0)
    with pytest.raises(ConfigError):
        BackendConfig(classes=1)


def delta_block(dim, dilation=1):
    reg = ParamRegistry(0)
    block = TCNBlock(dim, 3, dilation, reg, "b")
    k = np.zeros_like(block.kernel.data)
    for c in range(dim):
        k[c, c, 1] = 1.0
    block.kernel.data = k
    block.bias.data = np.zeros_like(block.bias.data)
    return block


def test_tcn_delta_kernel_residual_doubles_nonneg_input(rng):
    block = delta_block(3)
    x = np.abs(rng.standard_normal((2, 6, 3)))
    out = block(Tensor(x))
    assert np.abs(out.data - 2.0 * x).max() < 1e-14


def test_tcn_preserves_time(rng):
    reg = ParamRegistry(1)
    agg = TemporalAggregator(4, BackendConfig(dilations=(1, 2, 4), classes=3), reg)
    for t_len in (3, 9, 17):
        out = agg(Tensor(rng.standard_normal((1, t_len, 4))))
        assert out.shape == (1, t_len, 4)


def test_tcn_receptive_field_probe():
    # width-3 stack at dilations 1,2,4 reaches exactly 15 frames
    dim, t_len = 2, 31
    reg = ParamRegistry(2)
    agg = TemporalAggregator(dim, BackendConfig(dilations=(1, 2, 4), classes=3), reg)
    # positive weights + positive input make influence visible through relu
    for block in agg.blocks:
        block.kernel.data = np.abs(block.kernel.data) + 0.05
        block.bias.data = np.zeros_like(block.bias.data)
    base = np.full((1, t_len, dim), 0.1)
    center = t_len // 2
    with no_grad():
        ref = agg(Tensor(base)).data
        poked = base.copy()
        poked[0, center] += 1.0
        out = agg(Tensor(poked)).data
    affected = np.where(np.abs(out - ref).sum(axis=(0, 2)) > 1e-12)[0]
    assert affected.min() == center - 7 and affected.max() == center + 7
    assert len(affected) == 15


def test_tcn_dilation_beyond_length_warns(rng):
    reg = ParamRegistry(3)
    block = TCNBlock(2, 3, 8, reg, "b")
    with pytest.warns(UserWarning, match="dilation"):
        block(Tensor(rng.standard_normal((1, 4, 2))))


def test_tcn_gradcheck(rng):
    reg = ParamRegistry(4)
    agg = TemporalAggregator(3, BackendConfig(dilations=(1, 2), classes=3), reg)
    x = Tensor(rng.standard_normal((1, 6, 3)), requires_grad=True)
    probe = Tensor(rng.standard_normal((1, 6, 3)))
    err = gradcheck_many(lambda: ops.sum_(ops.mul(agg(x), probe)),
                         [x] + reg.tensors())
    assert err < 1e-4


def test_head_time_constant_input_pools_to_itself(rng):
    reg = ParamRegistry(5)
    head = ClassifierHead(4, 5, 3, reg)
    vec = rng.standard_normal((2, 1, 4))
    clip = np.repeat(vec, 6, axis=1)
    out_clip = head(Tensor(clip)).data
    out_single = head(Tensor(vec)).data
    assert np.abs(out_clip - out_single).max() < 1e-12
    assert out_clip.shape == (2, 3)


def test_head_gradcheck(rng):
    reg = ParamRegistry(6)
    head = ClassifierHead(3, 4, 3, reg)
    x = Tensor(rng.standard_normal((2, 4, 3)), requires_grad=True)
    y = np.array([0, 2])
    err = gradcheck_many(lambda: label_smoothed_ce(head(x), y, 0.1),
                         [x] + reg.tensors())
    assert err < 1e-4


# loss --------------------------------------------------------------------------


@pytest.mark.parametrize("eps", [0.0, 0.1, 0.3])
def test_loss_uniform_logits_is_log_c(eps):
    for c in (2, 4, 10):
        logits = Tensor(np.zeros((3, c)))
        loss = label_smoothed_ce(logits, np.zeros(3, dtype=int), eps)
        assert abs(loss.item() - math.log(c)) < 1e-12


def test_loss_zero_smoothing_confident_limit():
    logits = np.zeros((1, 4))
    logits[0, 1] = 50.0
    loss = label_smoothed_ce(Tensor(logits), np.array([1]), 0.0)
    assert loss.item() < 1e-12


def test_loss_matches_direct_formula(rng):
    B, C, eps = 5, 7, 0.1
    logits = rng.standard_normal((B, C)) * 3
    y = rng.integers(0, C, size=B)
    got = label_smoothed_ce(Tensor(logits), y, eps).item()
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    total = 0.0
    for b in range(B):
        others = [math.log(p[b, i]) for i in range(C) if i != y[b]]
        total += -((1 - eps) * math.log(p[b, y[b]]) + eps / (C - 1) * sum(others))
    assert abs(got - total / B) < 1e-12


def test_loss_smoothing_zero_equals_plain_ce(rng):
    B, C = 4, 6
    logits = rng.standard_normal((B, C))
    y = rng.integers(0, C, size=B)
    got = label_smoothed_ce(Tensor(logits), y, 0.0).item()
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    want = float(np.mean([-math.log(p[b, y[b]]) for b in range(B)]))
    assert abs(got - want) < 1e-12


def test_loss_shift_invariant(rng):
    logits = rng.standard_normal((3, 5))
    y = np.array([0, 3, 2])
    a = label_smoothed_ce(Tensor(logits), y, 0.1).item()
    b = label_smoothed_ce(Tensor(logits + 250.0), y, 0.1).item()
    assert abs(a - b) < 1e-10


def test_loss_label_out_of_range():
    with pytest.raises(DataError):
        label_smoothed_ce(Tensor(np.zeros((2, 3))), np.array([0, 3]), 0.1)


# metrics -----------------------------------------------------------------------


def rec(sid, y, p, cid="c"):
    return EvalRecord(clip_id=cid, speaker_id=sid, y_true=y, y_pred=p)


def test_accuracy_examples():
    assert accuracy([rec("a", 1, 1), rec("a", 2, 2)]) == 1.0
    records = [rec("a", 0, 0), rec("a", 1, 1), rec("a", 2, 2), rec("a", 3, 0)]
    assert accuracy(records) == 0.75


def test_accuracy_matches_independent_recount(rng):
    records = [rec(f"s{rng.integers(3)}", int(rng.integers(4)), int(rng.integers(4)))
               for _ in range(200)]
    count = 0
    for r in records:
        if r.y_true == r.y_pred:
            count += 1
    assert accuracy(records) == count / 200


def test_accuracy_empty_rejected():
    with pytest.raises(UsageError):
        accuracy([])
    with pytest.raises(UsageError):
        mean_accuracy([])


def test_mean_accuracy_single_speaker_collapses():
    records = [rec("a", 0, 0), rec("a", 1, 2)]
    assert mean_accuracy(records) == accuracy(records)


def test_mean_accuracy_unweighted_over_speakers():
    records = [rec("a", 0, 0), rec("a", 1, 1), rec("b", 0, 1), rec("b", 1, 0)]
    assert mean_accuracy(records) == 0.5


def test_accuracy_vs_mean_accuracy_imbalance():
    # speaker a: 10/10 correct, speaker b: 0/1 -> Acc 10/11 but mAcc 0.5
    records = [rec("a", 0, 0, cid=f"a{i}") for i in range(10)]
    records.append(rec("b", 1, 0, cid="b0"))
    assert accuracy(records) == 10 / 11
    assert mean_accuracy(records) == 0.5


def test_mean_accuracy_equals_accuracy_when_balanced(rng):
    records = []
    for sid in ("a", "b", "c"):
        for i in range(10):
            records.append(rec(sid, int(rng.integers(3)), int(rng.integers(3)), f"{sid}{i}"))
    groups = per_speaker_stats(records)
    assert {g["n"] for g in groups.values()} == {10}
    balanced_macc = mean_accuracy(records)
    assert abs(balanced_macc - accuracy(records)) < 1e-12
