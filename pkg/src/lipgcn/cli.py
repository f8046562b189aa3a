"""Command-line surface.

Subcommands: gen-data, build-graphs, train, eval, ablate, robust, gradcheck.
Every run resolves its configuration (defaults <- --config file <- --set
overrides <- --seed) and writes the resolved snapshot next to its outputs.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure, 1 anything else.
"""

import argparse
import io
import os
import sys

import numpy as np

from . import __version__
from .config import config_hash, resolve_config, synth_config
from .dataio import (atomic_write_bytes, read_manifest, write_dataset,
                     write_json)
from .errors import ConfigError, DataError, LipgcnError
from .frontend import DynamicExtractor, FrontendConfig
from .graphs import build_dag, build_lcg, build_sag, sample_node_features
from .numerics import Tensor, no_grad, ops
from .params import ParamRegistry
from .runtime import tune_threads
from .synth import iter_clips, split_clip_ids
from .training import evaluate, restore_model, run_ablation, run_robustness, train
from .verification import run_suite


def _ensure_out_dir(path, force):
    if os.path.exists(path) and os.listdir(path) and not force:
        raise ConfigError(f"output directory {path} is not empty (use --force)")
    os.makedirs(path, exist_ok=True)


def _snapshot(cfg, out_dir):
    write_json(os.path.join(out_dir, "config.resolved.json"), cfg)


def _write_matrix(path, matrix):
    buf = io.StringIO()
    np.savetxt(buf, matrix, fmt="%.12g")
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args):
    cfg = resolve_config(args.config, args.set, seed=args.seed, seed_key="dataset.seed")
    _ensure_out_dir(args.out, args.force)
    scfg = synth_config(cfg)
    splits = split_clip_ids(scfg)
    write_dataset(scfg, args.out, iter_clips(scfg), splits)
    _snapshot(cfg, args.out)
    print(f"dataset written to {args.out}: "
          f"{len(splits['train'])} train / {len(splits['val'])} val / "
          f"{len(splits['test'])} test clips")
    return 0


def cmd_build_graphs(args):
    cfg = resolve_config(args.config, args.set, seed=args.seed, seed_key="eval.seed")
    manifest = read_manifest(args.data)
    from .dataio import read_all_landmarks, read_tensor

    landmarks = read_all_landmarks(os.path.join(args.data, "landmarks.jsonl"))
    clip_id = args.clip or next(iter(manifest["splits"]["train"]))
    if clip_id not in manifest["clips"]:
        raise DataError(f"clip {clip_id!r} not in dataset {args.data}")
    seq = landmarks[clip_id]
    frames = read_tensor(os.path.join(args.data, manifest["clips"][clip_id]["frames_file"]))

    lcg = build_lcg()
    dag = build_dag(seq.coords, clip_id=clip_id)
    # SAG needs dynamic node features: sample them from a seed-initialized
    # dynamic extractor over the clip's frames (inspection-only surface).
    fcfg = FrontendConfig(frame_size=seq.frame_size)
    extractor = DynamicExtractor(fcfg, ParamRegistry(cfg["eval"]["seed"]))
    with no_grad():
        fd = extractor(Tensor(frames[None, None]))
        node = sample_node_features(fd, seq.coords, seq.frame_size)
        feats = ops.mean(node, axis=2).data[0]
    sag = build_sag(feats)

    os.makedirs(args.out, exist_ok=True)
    _write_matrix(os.path.join(args.out, "lcg.txt"), lcg.weights.data)
    _write_matrix(os.path.join(args.out, "dag.txt"), dag.weights.data)
    _write_matrix(os.path.join(args.out, "sag.txt"), sag.weights.data)
    degrees = lcg.weights.data.sum(axis=1).astype(int)
    hist = {int(d): int((degrees == d).sum()) for d in sorted(set(degrees.tolist()))}
    summary = {
        "clip_id": clip_id,
        "lcg": {
            "degree_histogram": hist,
            "symmetric": bool(np.array_equal(lcg.weights.data, lcg.weights.data.T)),
        },
        "dag": {
            "row_sums_min": float(dag.weights.data.sum(axis=1).min()),
            "row_sums_max": float(dag.weights.data.sum(axis=1).max()),
        },
        "sag": {
            "row_sums_min": float(sag.weights.data.sum(axis=1).min()),
            "row_sums_max": float(sag.weights.data.sum(axis=1).max()),
        },
        "config_hash": config_hash(cfg),
    }
    write_json(os.path.join(args.out, "summary.json"), summary)
    _snapshot(cfg, args.out)
    print(f"graph dump for {clip_id} written to {args.out}")
    return 0


def cmd_train(args):
    cfg = resolve_config(args.config, args.set, seed=args.seed, seed_key="train.seed")
    os.makedirs(args.out, exist_ok=True)
    _snapshot(cfg, args.out)
    result = train(cfg, args.data, out_dir=args.out,
                   log=lambda e: print(
                       f"epoch {e['epoch']:3d} loss {e['train_loss']:.4f} "
                       f"acc {e['train_acc']:.4f}"
                       + (f" val_acc {e['val_acc']:.4f}" if "val_acc" in e else "")))
    _, report = evaluate(result.model, args.data, cfg, split="test")
    write_json(os.path.join(args.out, "report.json"), report)
    print(f"test acc {report['acc']:.4f} macc {report['macc']:.4f} "
          f"({result.seconds:.1f}s train)")
    return 0


_PERTURB_CHOICES = ("none", "visual", "landmark", "both")


def cmd_eval(args):
    cfg = resolve_config(args.config, args.set, seed=args.seed, seed_key="eval.seed")
    model, ckpt = restore_model(args.checkpoint)
    # evaluation knobs (eval/robust sections) come from the CLI config;
    # the architecture comes from the checkpoint
    for key in ("eval", "robust"):
        ckpt["config"][key] = cfg[key]
    sn = cfg["robust"]["noise_sigma"] if args.perturb in ("visual", "both") else 0.0
    sj = cfg["robust"]["jitter_sigma"] if args.perturb in ("landmark", "both") else 0.0
    _, report = evaluate(model, args.data, ckpt["config"], split=args.split,
                         noise_sigma=sn, jitter_sigma=sj,
                         perturbation_name=args.perturb)
    os.makedirs(args.out, exist_ok=True)
    _snapshot(cfg, args.out)
    write_json(os.path.join(args.out, "report.json"), report)
    print(f"{args.split} acc {report['acc']:.4f} macc {report['macc']:.4f} "
          f"(perturb={args.perturb})")
    return 0


def cmd_ablate(args):
    cfg = resolve_config(args.config, args.set, seed=args.seed, seed_key="train.seed")
    os.makedirs(args.out, exist_ok=True)
    _snapshot(cfg, args.out)
    table = run_ablation(cfg, args.data, out_dir=args.out)
    print(f"{'variant':<14s} {'acc':>8s} {'macc':>8s} {'params':>9s}")
    for row in table["rows"]:
        print(f"{row['variant']:<14s} {row['acc']:8.4f} {row['macc']:8.4f} "
              f"{row['param_count']:9d}")
    return 0


def cmd_robust(args):
    cfg = resolve_config(args.config, args.set, seed=args.seed, seed_key="eval.seed")
    model, ckpt = restore_model(args.checkpoint)
    for key in ("eval", "robust"):
        ckpt["config"][key] = cfg[key]
    os.makedirs(args.out, exist_ok=True)
    _snapshot(cfg, args.out)
    table = run_robustness(model, ckpt["config"], args.data, out_dir=args.out,
                           split=args.split)
    print(f"{'condition':<26s} {'acc':>8s} {'macc':>8s} {'dAcc':>9s}")
    for row in table["rows"]:
        print(f"{row['condition']:<26s} {row['acc']:8.4f} {row['macc']:8.4f} "
              f"{row['acc_degradation']:9.4f}")
    return 0


def cmd_gradcheck(args):
    cfg = resolve_config(args.config, args.set, seed=args.seed, seed_key="eval.seed")
    seeds = 5 if args.quick else 20
    rows = run_suite(seeds=seeds, log=print)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _snapshot(cfg, args.out)
        write_json(os.path.join(args.out, "gradcheck.json"),
                   {"rows": rows, "seeds": seeds})
    print(f"all {len(rows)} gradient checks passed")
    return 0


# ---------------------------------------------------------------------------


def _add_common(p, data=False, out=True, checkpoint=False):
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY.PATH=VALUE",
                   help="dotted-key config override (repeatable)")
    p.add_argument("--seed", type=int, default=None, help="seed override")
    if data:
        p.add_argument("--data", required=True, help="dataset directory")
    if out:
        p.add_argument("--out", required=True, help="output directory")
    if checkpoint:
        p.add_argument("--checkpoint", required=True, help="checkpoint file")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lipgcn",
        description="Landmark-guided lipreading testbed (synthetic, CPU-scale).",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    _add_common(p)
    p.add_argument("--force", action="store_true",
                   help="write into a non-empty output directory")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("build-graphs", help="dump LCG/DAG/SAG matrices for one clip")
    _add_common(p, data=True)
    p.add_argument("--clip", default=None, help="clip id (default: first train clip)")
    p.set_defaults(fn=cmd_build_graphs)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    _add_common(p, data=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    _add_common(p, data=True, checkpoint=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--perturb", default="none", choices=_PERTURB_CHOICES)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train the four ablation variants")
    _add_common(p, data=True)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("robust", help="four-condition robustness sweep of a checkpoint")
    _add_common(p, data=True, checkpoint=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(fn=cmd_robust)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    _add_common(p, out=False)
    p.add_argument("--out", default=None, help="optional report directory")
    p.add_argument("--quick", action="store_true", help="5 seeds instead of 20")
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    tune_threads()
    try:
        return args.fn(args)
    except FileNotFoundError as e:
        print(f"error: file not found: {e.filename or e}", file=sys.stderr)
        return DataError.exit_code
    except LipgcnError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
