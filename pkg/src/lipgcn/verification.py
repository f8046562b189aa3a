"""Finite-difference verification suite for every differentiable operation
and for the fully fused model (all three graphs, composite fusion).

Op-level checks sweep every coordinate of small random instances across many
seeds; the full model gets one exhaustive sweep over every parameter at micro
scale plus sampled-coordinate sweeps across the remaining seeds. Tolerance is
1e-4 relative error against central differences (h = 1e-5, float64).
"""

import numpy as np

from .backend import BackendConfig, ClassifierHead, TCNBlock, label_smoothed_ce
from .errors import NumericError
from .frontend import DynamicExtractor, FrontendConfig, VisualExtractor
from .fusion import CatReduce, WsumRouter, fuse_cat, fuse_composite, fuse_sum, fuse_wsum
from .graphs import sag_weights, sample_node_features
from .model import build_model
from .numerics import Tensor, gradcheck_many
from .numerics import ops
from .params import ParamRegistry
from .stgcn import BiGRU, STGCNLayer, make_branch, run_branch, sgc

TOLERANCE = 1e-4


def _t(rng, shape, scale=1.0, grad=True):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=grad)


def _probe(rng, shape):
    """Fixed projection making any-shaped output a scalar, not axis-aligned."""
    w = Tensor(rng.standard_normal(shape))
    return lambda out: ops.sum_(ops.mul(out, w))


def _rownorm_adjacency(rng, n, batch=None):
    shape = (batch, n, n) if batch else (n, n)
    raw = np.abs(rng.standard_normal(shape)) + 0.1
    return Tensor(raw / raw.sum(axis=-1, keepdims=True))


# each case: name -> callable(rng) -> (scalar_fn, tensors_to_check)


def _case_pointwise(op):
    def build(rng):
        x = _t(rng, (3, 4))
        p = _probe(rng, (3, 4))
        return lambda: p(op(x)), [x]
    return build


def _case_binary(op, positive_second=False):
    def build(rng):
        a = _t(rng, (3, 4))
        b_data = rng.standard_normal((3, 4))
        if positive_second:
            b_data = np.abs(b_data) + 0.5
        b = Tensor(b_data, requires_grad=True)
        p = _probe(rng, (3, 4))
        return lambda: p(op(a, b)), [a, b]
    return build


def _case_matmul(rng):
    a = _t(rng, (2, 3, 4))
    b = _t(rng, (4, 5))
    p = _probe(rng, (2, 3, 5))
    return lambda: p(ops.matmul(a, b)), [a, b]


def _case_softmax(rng):
    x = _t(rng, (3, 5))
    p = _probe(rng, (3, 5))
    return lambda: p(ops.softmax(x, axis=1)), [x]


def _case_log_softmax(rng):
    x = _t(rng, (3, 5))
    p = _probe(rng, (3, 5))
    return lambda: p(ops.log_softmax(x, axis=1)), [x]


def _case_reductions(rng):
    x = _t(rng, (3, 4, 2))
    p = _probe(rng, (3, 2))
    return lambda: ops.add(p(ops.mean(x, axis=1)), ops.sum_(ops.mul(x, x))), [x]


def _case_shape_ops(rng):
    x = _t(rng, (2, 3, 4))
    p = _probe(rng, (4, 2, 2))
    def f():
        y = ops.transpose(x, (2, 0, 1))          # [4,2,3]
        y = ops.narrow(y, axis=2, start=1, length=2)
        y = ops.concat([y, ops.flip(y, axis=0)], axis=1)  # [4,4,2]
        y = ops.reshape(y, (4, 2, 2, 2))
        return p(ops.mean(y, axis=2))
    return f, [x]


def _case_replicate_pad(rng):
    x = _t(rng, (2, 3, 4))
    p = _probe(rng, (2, 7, 4))
    return lambda: p(ops.tanh(ops.replicate_pad(x, axis=1, pad=2))), [x]


def _case_conv1d(rng):
    x = _t(rng, (2, 3, 7))
    k = _t(rng, (4, 3, 3), scale=0.6)
    d = int(rng.integers(1, 4))
    p = _probe(rng, (2, 4, 7))
    return lambda: p(ops.conv1d_temporal(x, k, dilation=d)), [x, k]


def _case_conv2d(rng):
    x = _t(rng, (2, 2, 6, 5))
    k = _t(rng, (3, 2, 3, 3), scale=0.6)
    s = int(rng.integers(1, 3))
    ho = (6 - 1) // s + 1
    wo = (5 - 1) // s + 1
    p = _probe(rng, (2, 3, ho, wo))
    return lambda: p(ops.conv2d_spatial(x, k, stride=s)), [x, k]


def _case_conv3d(rng):
    x = _t(rng, (1, 1, 5, 6, 6))
    k = _t(rng, (2, 1, 3, 3, 3), scale=0.6)
    p = _probe(rng, (1, 2, 5, 6, 6))
    return lambda: p(ops.conv3d_local(x, k)), [x, k]


def _case_gru(rng):
    B, T, D, H = 2, 5, 3, 4
    x = _t(rng, (B, T, D))
    wx = _t(rng, (D, 3 * H), scale=0.5)
    wh = _t(rng, (H, 3 * H), scale=0.5)
    bx = _t(rng, (3 * H,), scale=0.2)
    bh = _t(rng, (3 * H,), scale=0.2)
    p = _probe(rng, (B, T, H))
    return lambda: p(ops.gru_sequence(x, wx, wh, bx, bh)), [x, wx, wh, bx, bh]


def _case_gather(rng):
    feat = _t(rng, (2, 3, 4, 5, 5))
    rows = rng.integers(0, 5, size=(4, 6))
    cols = rng.integers(0, 5, size=(4, 6))
    p = _probe(rng, (2, 6, 4, 3))
    return lambda: p(ops.gather_nodes(feat, rows, cols)), [feat]


def _case_sag_weights(rng):
    f = Tensor(rng.standard_normal((2, 5, 3)) + 0.3, requires_grad=True)
    p = _probe(rng, (2, 5, 5))
    return lambda: p(sag_weights(f)), [f]


def _case_sample_nodes(rng):
    feat = _t(rng, (2, 3, 4, 6, 6))
    coords = rng.uniform(0.0, 11.9, size=(4, 5, 2))
    p = _probe(rng, (2, 5, 4, 3))
    return lambda: p(sample_node_features(feat, coords, frame_size=12)), [feat]


def _case_sgc(rng):
    f = _t(rng, (2, 5, 3, 4))
    w = _t(rng, (4, 4), scale=0.5)
    m = _rownorm_adjacency(rng, 5)
    p = _probe(rng, (2, 5, 3, 4))
    return lambda: p(sgc(f, m, w, activation="tanh")), [f, w]


def _case_stgcn_layer(rng):
    reg = ParamRegistry(int(rng.integers(0, 2**31)))
    layer = STGCNLayer(3, reg, "layer", activation="relu")
    f = _t(rng, (2, 4, 5, 3))
    m = _rownorm_adjacency(rng, 4)
    p = _probe(rng, (2, 4, 5, 3))
    return lambda: p(layer(f, m)), [f] + reg.tensors()


def _case_bigru(rng):
    reg = ParamRegistry(int(rng.integers(0, 2**31)))
    gru = BiGRU(3, 2, reg, "gru")
    x = _t(rng, (2, 5, 3))
    p = _probe(rng, (2, 5, 4))
    return lambda: p(gru(x)), [x] + reg.tensors()


def _case_run_branch(rng):
    reg = ParamRegistry(int(rng.integers(0, 2**31)))
    branch = make_branch("g", 3, 4, reg, n_layers=2)
    f = _t(rng, (1, 5, 4, 3))
    m = _rownorm_adjacency(rng, 5, batch=1)
    p = _probe(rng, (1, 4, 4))
    return lambda: p(run_branch(f, branch, m)), [f] + reg.tensors()


def _case_frontend_dynamic(rng):
    cfg = FrontendConfig(dyn_channels=2, visual_dim=4, frame_size=6,
                         dyn_kernel=(3, 3, 3), visual_channels=(2, 3))
    reg = ParamRegistry(int(rng.integers(0, 2**31)))
    ed = DynamicExtractor(cfg, reg)
    x = Tensor(rng.uniform(0, 1, size=(1, 1, 4, 6, 6)), requires_grad=True)
    p = _probe(rng, (1, 2, 4, 6, 6))
    return lambda: p(ed(x)), [x] + reg.tensors()


def _case_frontend_visual(rng):
    cfg = FrontendConfig(dyn_channels=2, visual_dim=4, frame_size=6,
                         dyn_kernel=(3, 3, 3), visual_channels=(2, 3))
    reg = ParamRegistry(int(rng.integers(0, 2**31)))
    ev = VisualExtractor(cfg, reg)
    x = _t(rng, (1, 2, 3, 6, 6))
    p = _probe(rng, (1, 3, 4))
    return lambda: p(ev(x)), [x] + reg.tensors()


def _case_fuse_cat(rng):
    reg = ParamRegistry(int(rng.integers(0, 2**31)))
    red = CatReduce([3, 3], 3, reg, "cat")
    a, b = _t(rng, (2, 4, 3)), _t(rng, (2, 4, 3))
    p = _probe(rng, (2, 4, 3))
    return lambda: p(fuse_cat([a, b], red)), [a, b] + reg.tensors()


def _case_fuse_wsum(rng):
    reg = ParamRegistry(int(rng.integers(0, 2**31)))
    router = WsumRouter(3, reg, "router")
    fs = [_t(rng, (2, 4, 3)) for _ in range(3)]
    p = _probe(rng, (2, 4, 3))
    return lambda: p(fuse_wsum(fs, router)), fs + reg.tensors()


def _case_fuse_composite(rng):
    reg = ParamRegistry(int(rng.integers(0, 2**31)))
    red = CatReduce([3, 3], 3, reg, "cat")
    fs = [_t(rng, (2, 4, 3)) for _ in range(3)]
    p = _probe(rng, (2, 4, 3))
    return lambda: p(ops.add(fuse_composite(fs[0], fs[1], fs[2], red),
                             fuse_sum([fs[0], fs[2]]))), fs + reg.tensors()


def _case_tcn(rng):
    reg = ParamRegistry(int(rng.integers(0, 2**31)))
    block = TCNBlock(3, 3, 2, reg, "block")
    x = _t(rng, (2, 6, 3))
    p = _probe(rng, (2, 6, 3))
    return lambda: p(block(x)), [x] + reg.tensors()


def _case_head_and_loss(rng):
    reg = ParamRegistry(int(rng.integers(0, 2**31)))
    head = ClassifierHead(4, 5, 3, reg, "head")
    x = _t(rng, (3, 4, 4))
    y = rng.integers(0, 3, size=3)
    return lambda: label_smoothed_ce(head(x), y, 0.1), [x] + reg.tensors()


OP_CASES = {
    "add": _case_binary(ops.add),
    "sub": _case_binary(ops.sub),
    "mul": _case_binary(ops.mul),
    "div": _case_binary(ops.div, positive_second=True),
    "neg_scale": _case_pointwise(lambda x: ops.scale(ops.neg(x), 0.7)),
    "relu": _case_pointwise(ops.relu),
    "sigmoid": _case_pointwise(ops.sigmoid),
    "tanh": _case_pointwise(ops.tanh),
    "exp": _case_pointwise(ops.exp),
    "log_sqrt": _case_pointwise(lambda x: ops.log(ops.sqrt(ops.add(ops.mul(x, x), 0.5)))),
    "softmax": _case_softmax,
    "log_softmax": _case_log_softmax,
    "reductions": _case_reductions,
    "shape_ops": _case_shape_ops,
    "replicate_pad": _case_replicate_pad,
    "matmul": _case_matmul,
    "conv1d_temporal": _case_conv1d,
    "conv2d_spatial": _case_conv2d,
    "conv3d_local": _case_conv3d,
    "gru_sequence": _case_gru,
    "gather_nodes": _case_gather,
    "sample_node_features": _case_sample_nodes,
    "sag_weights": _case_sag_weights,
    "sgc": _case_sgc,
    "stgcn_layer": _case_stgcn_layer,
    "bigru": _case_bigru,
    "run_branch": _case_run_branch,
    "frontend_dynamic": _case_frontend_dynamic,
    "frontend_visual": _case_frontend_visual,
    "fuse_cat": _case_fuse_cat,
    "fuse_wsum": _case_fuse_wsum,
    "fuse_composite": _case_fuse_composite,
    "tcn_block": _case_tcn,
    "head_and_loss": _case_head_and_loss,
}


def check_case(build, seeds=20, base_seed=0):
    worst = 0.0
    for s in range(seeds):
        rng = np.random.default_rng(base_seed + s)
        f, tensors = build(rng)
        worst = max(worst, gradcheck_many(f, tensors))
    return worst


# ---------------------------------------------------------------------------
# full fused model at micro scale


def micro_model_config():
    return {
        "dataset": {"classes": 3, "speakers": 3, "train_speakers": 2, "clips_per": 1,
                    "frames": 5, "frame_size": 6, "val_fraction": 0.0, "seed": 0},
        "model": {"dyn_channels": 2, "visual_dim": 8, "dyn_kernel": [3, 3, 3],
                  "visual_channels": [3, 4], "branch_layers": 2,
                  "use_dag": True, "use_lcg": True, "use_sag": True,
                  "fusion_mode": "composite", "merge_mode": "sum",
                  "smoothing": 0.1,
                  "backend": {"dilations": [1, 2], "kernel": 3, "hidden": 8}},
        "train": {"lr": 3e-3, "weight_decay": 0.0, "beta1": 0.9, "beta2": 0.999,
                  "eps": 1e-8, "batch_size": 2, "epochs": 1, "seed": 0,
                  "resource_mode": "high",
                  "augment": {"flip_p": 0.0, "mask_max_len": 0}},
        "eval": {"batch_size": 4, "seed": 0},
        "robust": {"noise_sigma": 0.0, "jitter_sigma": 0.0},
    }


def _micro_batch(rng, cfg, batch=2):
    d = cfg["dataset"]
    T, S = d["frames"], d["frame_size"]
    frames = rng.uniform(0.0, 1.0, size=(batch, 1, T, S, S))
    coords = rng.uniform(0.8, S - 1.8, size=(batch, T, 20, 2))
    labels = rng.integers(0, d["classes"], size=batch)
    return frames, coords, labels


def check_full_model(seed=0, sample=None):
    """Gradcheck every parameter of the fused model on one random batch."""
    cfg = micro_model_config()
    rng = np.random.default_rng(seed)
    model = build_model(cfg, seed=seed)
    frames, coords, labels = _micro_batch(rng, cfg)
    frames_t = Tensor(frames)

    def f():
        return model.loss_and_logits(frames_t, coords, labels)[0]

    tensors = [t for _, t in model.parameters()]
    return gradcheck_many(f, tensors, sample=sample, rng=rng)


def run_suite(seeds=20, full_sample=6, log=print):
    """Run every check; returns rows and raises NumericError on any failure."""
    rows = []

    def add_row(name, err):
        err = float(err)
        ok = err < TOLERANCE
        rows.append({"check": name, "max_rel_error": err, "tolerance": TOLERANCE,
                     "passed": ok})
        if log:
            log(f"[{'PASS' if ok else 'FAIL'}] {name:<28s} max rel err {err:.3e}")

    for name, build in OP_CASES.items():
        add_row(name, check_case(build, seeds=seeds))
    add_row("full_model_exhaustive", check_full_model(seed=0))
    worst = 0.0
    for s in range(1, seeds):
        worst = max(worst, check_full_model(seed=s, sample=full_sample))
    add_row(f"full_model_sampled_x{seeds - 1}", worst)

    failed = [r["check"] for r in rows if not r["passed"]]
    if failed:
        raise NumericError(f"gradient checks failed: {failed}")
    return rows
