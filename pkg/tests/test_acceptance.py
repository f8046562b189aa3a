"""Acceptance criteria, one test per criterion, at the stated tolerances.

Each test finishes by printing a single [PASS] line (run with ``pytest -s``
to see them live). The expensive protocol runs (criteria 6/7) share one
session-scoped set of trainings on the default synthetic dataset:
3 seeds x (full model + visual-only baseline), low-resource mode.
"""

import math
import os
import time

import numpy as np
import pytest

from lipgcn.backend import accuracy, label_smoothed_ce, mean_accuracy, EvalRecord
from lipgcn.config import default_config, validate_config
from lipgcn.dataio import write_dataset
from lipgcn.errors import NumericError
from lipgcn.frontend import DynamicExtractor, FrontendConfig
from lipgcn.fusion import FUSION_MODES, CatReduce, FusionModule, FusionSpec, \
    fuse_cat, fuse_composite, fuse_sum
from lipgcn.graphs import (build_lcg, cosine_similarity, dag_pre_weights,
                           build_dag, build_sag, mean_pairwise_distances,
                           sample_node_features)
from lipgcn.model import ablation_variants, build_model
from lipgcn.numerics import Tensor, no_grad, ops
from lipgcn.params import ParamRegistry
from lipgcn.stgcn import sgc
from lipgcn.synth import SynthConfig, iter_clips, split_clip_ids
from lipgcn.training import evaluate, run_robustness, train
from lipgcn.verification import run_suite
from lipgcn.cli import main as cli_main

from tests.test_kernels import conv1d_oracle, conv2d_oracle, conv3d_oracle
from tests.test_stgcn import sgc_oracle, rownorm

SEEDS = (0, 1, 2)
ACCEPT_EPOCHS = 12  # well within the stated 30-epoch allowance


def _report(line):
    print(f"\n[PASS] {line}")


# ---------------------------------------------------------------------------
# shared expensive fixtures


@pytest.fixture(scope="session")
def default_dataset(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("accept-data"))
    cfg = default_config()
    validate_config(cfg)
    scfg = SynthConfig(**cfg["dataset"])
    write_dataset(scfg, out, iter_clips(scfg), split_clip_ids(scfg))
    return out


@pytest.fixture(scope="session")
def protocol_runs(default_dataset):
    """3 seeds x (full, baseline) low-resource trainings plus test reports."""
    started = time.time()
    runs = {"full": [], "baseline": []}
    for seed in SEEDS:
        for name in ("full", "baseline"):
            cfg = default_config()
            if name == "baseline":
                cfg["model"]["use_lcg"] = cfg["model"]["use_dag"] = \
                    cfg["model"]["use_sag"] = False
            cfg["train"]["epochs"] = ACCEPT_EPOCHS
            cfg["train"]["seed"] = seed
            validate_config(cfg)
            assert cfg["train"]["resource_mode"] == "low"
            result = train(cfg, default_dataset)
            _, report = evaluate(result.model, default_dataset, cfg, split="test")
            runs[name].append({
                "seed": seed,
                "cfg": cfg,
                "model": result.model,
                "final_train_acc": result.history[-1]["train_acc"],
                "test_acc": report["acc"],
                "test_macc": report["macc"],
            })
    runs["wall_seconds"] = time.time() - started
    return runs


# ---------------------------------------------------------------------------
# criterion 1: gradient suite


def test_criterion_1_gradient_suite():
    started = time.time()
    rows = run_suite(seeds=20, log=None)
    elapsed = time.time() - started
    worst = max(r["max_rel_error"] for r in rows)
    assert all(r["passed"] for r in rows)
    assert worst < 1e-4
    assert elapsed < 120.0, f"gradient suite took {elapsed:.0f}s (budget 120s)"
    _report(f"criterion 1: {len(rows)} gradient checks < 1e-4 "
            f"(worst {worst:.2e}) in {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# criterion 2: oracle equivalence


def test_criterion_2_oracle_equivalence():
    worst_sgc = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 9))
        f = rng.standard_normal((2, n, 4, 3))
        m = rownorm(rng, n)
        w = rng.standard_normal((3, 3))
        got = sgc(Tensor(f), Tensor(m), Tensor(w), activation="relu").data
        worst_sgc = max(worst_sgc, float(np.abs(got - sgc_oracle(f, m, w, "relu")).max()))
    assert worst_sgc < 1e-9

    from lipgcn import kernels
    rng = np.random.default_rng(1234)
    worst_conv = 0.0
    x1 = rng.standard_normal((2, 3, 11))
    k1 = rng.standard_normal((4, 3, 3))
    worst_conv = max(worst_conv, float(np.abs(
        kernels.conv1d_forward(x1, k1, 2) - conv1d_oracle(x1, k1, 2)).max()))
    x2 = rng.standard_normal((2, 2, 7, 6))
    k2 = rng.standard_normal((3, 2, 3, 3))
    worst_conv = max(worst_conv, float(np.abs(
        kernels.conv2d_forward(x2, k2, 2) - conv2d_oracle(x2, k2, 2)).max()))
    x3 = rng.standard_normal((1, 1, 5, 6, 6))
    k3 = rng.standard_normal((2, 1, 3, 5, 3))
    worst_conv = max(worst_conv, float(np.abs(
        kernels.conv3d_forward(x3, k3) - conv3d_oracle(x3, k3)).max()))
    assert worst_conv < 1e-12
    _report(f"criterion 2: sgc vs brute force on 50 instances (max {worst_sgc:.2e} "
            f"< 1e-9), convs vs loop oracles (max {worst_conv:.2e} < 1e-12)")


# ---------------------------------------------------------------------------
# criterion 3: graph invariants on 100 random synthetic clips


def test_criterion_3_graph_invariants():
    scfg = SynthConfig(classes=5, speakers=5, train_speakers=4, clips_per=4,
                       frames=12, frame_size=16, seed=321)
    clips = list(iter_clips(scfg))
    assert len(clips) == 100
    fcfg = FrontendConfig(frame_size=scfg.frame_size)
    extractor = DynamicExtractor(fcfg, ParamRegistry(0))
    lcg_degrees = build_lcg().weights.data.sum(axis=1)
    assert lcg_degrees.min() >= 3 and lcg_degrees.max() <= 5

    worst_sym = worst_scale = worst_row = 0.0
    for clip in clips:
        coords = clip.landmarks.coords
        # DAG: strict monotone decrease of pre-normalization weight in distance
        d = mean_pairwise_distances(coords)
        w = dag_pre_weights(coords)
        for i in (0, 7, 13):
            others = np.array([j for j in range(20) if j != i])
            cols = others[np.argsort(d[i, others])]
            assert (np.diff(w[i, cols]) < 0).all()  # strictly decreasing
        dag = build_dag(coords)
        worst_row = max(worst_row, float(np.abs(dag.weights.data.sum(axis=1) - 1).max()))

        with no_grad():
            fd = extractor(Tensor(clip.frames[None, None]))
            node = sample_node_features(fd, coords, scfg.frame_size)
            feats = ops.mean(node, axis=2).data[0]
        cos = cosine_similarity(Tensor(feats)).data
        worst_sym = max(worst_sym, float(np.abs(cos - cos.T).max()))
        scaled = feats.copy()
        scaled[5] *= 11.0
        cos_b = cosine_similarity(Tensor(scaled)).data
        worst_scale = max(worst_scale, float(np.abs(cos - cos_b).max()))
        sag = build_sag(feats)
        worst_row = max(worst_row, float(np.abs(sag.weights.data.sum(axis=1) - 1).max()))

    assert worst_sym < 1e-12 and worst_scale < 1e-12 and worst_row < 1e-9
    _report(f"criterion 3: 100 clips; LCG degrees in [3,5]; DAG monotone; "
            f"SAG symmetry {worst_sym:.1e} / scale-invariance {worst_scale:.1e} "
            f"< 1e-12; row sums within {worst_row:.1e} < 1e-9")


# ---------------------------------------------------------------------------
# criterion 4: equation fidelity


def test_criterion_4_equation_fidelity():
    for eps in (0.0, 0.1, 0.3):
        for c in (2, 5, 10):
            loss = label_smoothed_ce(Tensor(np.zeros((4, c))),
                                     np.zeros(4, dtype=int), eps)
            assert abs(loss.item() - math.log(c)) < 1e-12

    rng = np.random.default_rng(99)
    logits = rng.standard_normal((6, 8)) * 2
    y = rng.integers(0, 8, size=6)
    got = label_smoothed_ce(Tensor(logits), y, 0.0).item()
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    plain_ce = float(np.mean([-math.log(p[b, y[b]]) for b in range(6)]))
    assert abs(got - plain_ce) < 1e-12

    records = [EvalRecord(f"a{i}", "a", 0, 0) for i in range(10)]
    records.append(EvalRecord("b0", "b", 1, 0))
    assert accuracy(records) == 10 / 11
    assert mean_accuracy(records) == 0.5
    _report("criterion 4: smoothed CE equals ln(C) for eps in {0,0.1,0.3}; "
            "eps=0 equals plain CE < 1e-12; Acc 10/11 vs mAcc 0.5 exact")


# ---------------------------------------------------------------------------
# criterion 5: fusion parity


def test_criterion_5_fusion_parity():
    d = 64
    operands = {"cat2": ("lcg", "sag"), "sum2": ("lcg", "dag"),
                "cat3": ("lcg", "dag", "sag"), "wsum3": ("lcg", "dag", "sag"),
                "composite": ("lcg", "dag", "sag")}
    rng = np.random.default_rng(5)
    feats = {k: Tensor(rng.standard_normal((2, 4, d))) for k in ("lcg", "dag", "sag")}
    for mode in FUSION_MODES:
        module = FusionModule(FusionSpec(mode, operands[mode], d), ParamRegistry(0))
        assert module(feats).shape == (2, 4, d)

    reg = ParamRegistry(1)
    red = CatReduce([d, d], d, reg, "cat")
    got = fuse_composite(feats["lcg"], feats["dag"], feats["sag"], red).data
    want = fuse_sum([feats["lcg"], fuse_cat([feats["dag"], feats["sag"]], red)]).data
    assert np.array_equal(got, want)

    extra = {mode: FusionModule(FusionSpec(mode, operands[mode], d),
                                ParamRegistry(0)).extra_param_count
             for mode in ("sum2", "cat2", "wsum3")}
    assert extra["sum2"] == 0 < extra["cat2"] < extra["wsum3"]
    _report(f"criterion 5: all five fusion modes constructible; composite == "
            f"sum(cat(.)) bitwise; extra params 0 < cat {extra['cat2']} < "
            f"wsum {extra['wsum3']}")


# ---------------------------------------------------------------------------
# criterion 6: directional ablation protocol


def test_criterion_6_ablation_direction(protocol_runs):
    full_acc = float(np.mean([r["test_acc"] for r in protocol_runs["full"]]))
    base_acc = float(np.mean([r["test_acc"] for r in protocol_runs["baseline"]]))
    train_acc = float(np.mean([r["final_train_acc"] for r in protocol_runs["full"]]))
    wall = protocol_runs["wall_seconds"]

    counts = [build_model(v, seed=0).param_count()
              for _, v in ablation_variants(default_config())]
    assert counts == sorted(counts) and len(set(counts)) == 4

    assert train_acc >= 0.99, f"full-model train accuracy {train_acc:.4f} < 0.99"
    assert full_acc >= base_acc, \
        f"unseen-speaker acc: full {full_acc:.4f} < baseline {base_acc:.4f}"
    assert wall < 900.0, f"protocol took {wall:.0f}s (budget 900s)"
    _report(f"criterion 6: unseen Acc full {full_acc:.4f} >= baseline "
            f"{base_acc:.4f}; train acc {train_acc:.4f} >= 0.99 within "
            f"{ACCEPT_EPOCHS} <= 30 epochs; params {counts} increasing; "
            f"{wall:.0f}s < 900s")


# ---------------------------------------------------------------------------
# criterion 7: robustness protocol


def test_criterion_7_robustness(protocol_runs, default_dataset, tmp_path):
    jitter_wins = 0
    for run in protocol_runs["full"]:
        table = run_robustness(run["model"], run["cfg"], default_dataset,
                               out_dir=str(tmp_path / f"rob{run['seed']}"))
        rows = {r["condition"]: r for r in table["rows"]}
        assert [r["condition"] for r in table["rows"]] == [
            "clean", "visual_noise", "landmark_perturbation",
            "noise_and_perturbation"]
        for r in table["rows"]:
            assert np.isfinite(r["acc_degradation"])
        if rows["landmark_perturbation"]["acc_degradation"] <= \
                rows["visual_noise"]["acc_degradation"]:
            jitter_wins += 1
    assert jitter_wins >= 2, \
        f"landmark jitter cheaper than visual noise on only {jitter_wins}/3 seeds"
    _report(f"criterion 7: 4 robustness rows per seed; degradations finite; "
            f"jitter <= noise degradation on {jitter_wins}/3 seeds")


# ---------------------------------------------------------------------------
# criterion 8: byte-identical determinism


def test_criterion_8_determinism(tmp_path):
    flags = ["--set=dataset.classes=3", "--set=dataset.speakers=4",
             "--set=dataset.train_speakers=3", "--set=dataset.clips_per=3",
             "--set=dataset.frames=8", "--set=dataset.frame_size=12",
             "--set=dataset.seed=3",
             "--set=model.dyn_channels=4", "--set=model.visual_dim=16",
             "--set=model.dyn_kernel=[3,3,3]", "--set=model.visual_channels=[6,8]",
             '--set=model.backend={"dilations":[1,2],"kernel":3,"hidden":16}',
             "--set=train.epochs=1", "--set=train.batch_size=8",
             "--set=train.resource_mode=high"]

    def run_once(tag):
        data = tmp_path / f"data-{tag}"
        out = tmp_path / f"run-{tag}"
        rob = tmp_path / f"rob-{tag}"
        assert cli_main(["gen-data", "--out", str(data)] + flags) == 0
        assert cli_main(["train", "--data", str(data), "--out", str(out),
                         "--seed", "4"] + flags) == 0
        assert cli_main(["robust", "--data", str(data), "--checkpoint",
                         str(out / "model.ckpt"), "--out", str(rob)] + flags) == 0
        blobs = {}
        for path in ("data/manifest.json", "data/landmarks.jsonl",
                     "run/model.ckpt", "run/report.json", "run/history.json",
                     "rob/robustness.json"):
            kind, name = path.split("/")
            with open({"data": data, "run": out, "rob": rob}[kind] / name, "rb") as f:
                blobs[path] = f.read()
        return blobs

    a = run_once("a")
    b = run_once("b")
    assert set(a) == set(b)
    for name in a:
        assert a[name] == b[name], f"{name} differs between identical runs"
    _report("criterion 8: gen-data/train/robust repeated with identical "
            "config+seed produce byte-identical manifests, checkpoints, reports")
