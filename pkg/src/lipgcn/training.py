"""Deterministic training and evaluation protocols.

AdamW with decoupled weight decay (the shrink is applied multiplicatively,
outside the moment update, so zero-gradient steps scale parameters by exactly
1 - lr*lambda). Training, evaluation, the four-variant ablation, and the
four-condition robustness sweep are all pure functions of (config, data,
seed); identical inputs reproduce identical checkpoints and reports.
"""

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import synth
from .backend import (EvalRecord, accuracy, label_smoothed_ce, mean_accuracy,
                      per_speaker_stats)
from .config import config_hash, validate_config
from .dataio import (load_checkpoint, load_split, read_manifest,
                     save_checkpoint, split_to_clips, write_json)
from .errors import CheckpointError, ConfigError, NumericError
from .model import ablation_variants, build_model
from .numerics import GradTape, Tensor, backward, no_grad
from .runtime import tune_threads
from .synth import perturb_landmarks, perturb_visual


def _rng(*key):
    return np.random.default_rng(np.random.SeedSequence(list(key)))


class AdamW:
    def __init__(self, params, lr=3e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in self.params}
        self.v = {name: np.zeros_like(t.data) for name, t in self.params}

    def step(self):
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                p.data = p.data * (1.0 - self.lr * self.weight_decay)

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def state(self):
        return {
            "step": self.step_count,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weight_decay": self.weight_decay,
            "m": self.m,
            "v": self.v,
        }

    def load_state(self, state, moments):
        self.step_count = state["step"]
        if moments is not None:
            self.m = {k: v.copy() for k, v in moments["m"].items()}
            self.v = {k: v.copy() for k, v in moments["v"].items()}


# ---------------------------------------------------------------------------
# data plumbing


def low_resource_indices(speakers, seed):
    """Uniform per-speaker subsample of one third of the training clips."""
    rng = _rng(seed, 7)
    by_speaker = {}
    for i, sid in enumerate(speakers):
        by_speaker.setdefault(sid, []).append(i)
    keep = []
    for sid in sorted(by_speaker):
        idxs = by_speaker[sid]
        n = max(1, len(idxs) // 3)
        keep.extend(np.asarray(idxs)[rng.choice(len(idxs), size=n, replace=False)])
    return np.sort(np.asarray(keep))


def _batch_arrays(clips):
    frames = np.stack([c.frames for c in clips])[:, None]  # [B,1,T,H,W]
    coords = np.stack([c.landmarks.coords for c in clips])
    labels = np.asarray([c.label for c in clips], dtype=np.int64)
    return frames, coords, labels


def _check_dataset_matches(cfg, manifest):
    expected = {k: cfg["dataset"][k] for k in manifest["generator"]}
    if expected != manifest["generator"]:
        raise ConfigError(
            "dataset on disk does not match config.dataset: "
            f"disk={manifest['generator']} config={expected}"
        )


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: object
    optimizer: AdamW
    history: list
    config_hash: str
    seed: int
    seconds: float = 0.0
    checkpoint_path: str = None
    report: dict = field(default_factory=dict)


def train(cfg, data_dir, out_dir=None, log=None):
    validate_config(cfg)
    tune_threads()
    tcfg = cfg["train"]
    started = time.time()
    manifest = read_manifest(data_dir)
    _check_dataset_matches(cfg, manifest)
    train_data = load_split(data_dir, manifest, "train")
    val_data = load_split(data_dir, manifest, "val")

    if tcfg["resource_mode"] == "low":
        keep = set(low_resource_indices(train_data["speakers"], tcfg["seed"]).tolist())
        train_clips = [c for i, c in enumerate(split_to_clips(train_data)) if i in keep]
    else:
        train_clips = split_to_clips(train_data)
    val_clips = split_to_clips(val_data)

    model = build_model(cfg, seed=tcfg["seed"])
    opt = AdamW(model.parameters(), lr=tcfg["lr"],
                betas=(tcfg["beta1"], tcfg["beta2"]), eps=tcfg["eps"],
                weight_decay=tcfg["weight_decay"])

    n = len(train_clips)
    batch = tcfg["batch_size"]
    aug = tcfg["augment"]
    history = []
    for epoch in range(tcfg["epochs"]):
        order = _rng(tcfg["seed"], 5, epoch).permutation(n)
        total_loss, total_correct = 0.0, 0
        for lo in range(0, n, batch):
            idxs = order[lo:lo + batch]
            clips = [
                synth.augment(train_clips[i], flip_p=aug["flip_p"],
                              mask_max_len=aug["mask_max_len"],
                              seed=np.random.SeedSequence(
                                  [tcfg["seed"], 6, epoch, int(i)]))
                for i in idxs
            ]
            frames, coords, labels = _batch_arrays(clips)
            loss, logits = model.loss_and_logits(Tensor(frames), coords, labels)
            if not np.isfinite(loss.data).all():
                culprit = GradTape(loss).first_nonfinite()
                where = culprit[0] if culprit else "loss"
                raise NumericError(
                    f"non-finite loss at epoch {epoch}; first non-finite tensor "
                    f"from op {where!r}"
                )
            backward(loss)
            opt.step()
            opt.zero_grad()
            total_loss += loss.item() * len(idxs)
            total_correct += int((model.predict(logits) == labels).sum())
        entry = {
            "epoch": epoch,
            "train_loss": total_loss / n,
            "train_acc": total_correct / n,
        }
        if val_clips:
            val_records, val_loss = _forward_split(model, val_clips,
                                                   cfg["eval"]["batch_size"],
                                                   smoothing=cfg["model"]["smoothing"])
            entry["val_loss"] = val_loss
            entry["val_acc"] = accuracy(val_records)
        history.append(entry)
        if log:
            log(entry)

    result = TrainResult(model=model, optimizer=opt, history=history,
                         config_hash=model.config_hash, seed=tcfg["seed"],
                         seconds=time.time() - started)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        ckpt = os.path.join(out_dir, "model.ckpt")
        save_checkpoint(ckpt, model.registry.state_arrays(), opt.state(),
                        cfg, model.config_hash, tcfg["seed"])
        write_json(os.path.join(out_dir, "history.json"),
                   {"history": history, "config_hash": model.config_hash,
                    "seed": tcfg["seed"]})
        result.checkpoint_path = ckpt
    return result


def restore_model(checkpoint_path, cfg=None):
    """Rebuild the model a checkpoint was trained with and load its weights."""
    ckpt = load_checkpoint(checkpoint_path)
    if cfg is not None and config_hash(cfg) != ckpt["config_hash"]:
        raise CheckpointError(
            f"checkpoint config hash {ckpt['config_hash']} does not match "
            f"requested config {config_hash(cfg)}"
        )
    model = build_model(ckpt["config"], seed=ckpt["seed"])
    model.registry.load_state_arrays(ckpt["params"])
    return model, ckpt


# ---------------------------------------------------------------------------
# evaluation


def _forward_split(model, clips, batch_size, smoothing=None):
    records = []
    total_loss = 0.0
    with no_grad():
        for lo in range(0, len(clips), batch_size):
            chunk = clips[lo:lo + batch_size]
            frames, coords, labels = _batch_arrays(chunk)
            logits = model.forward(Tensor(frames), coords)
            if smoothing is not None:
                total_loss += label_smoothed_ce(logits, labels, smoothing).item() * len(chunk)
            preds = model.predict(logits)
            records.extend(
                EvalRecord(clip_id=c.landmarks.clip_id, speaker_id=c.speaker_id,
                           y_true=int(c.label), y_pred=int(p))
                for c, p in zip(chunk, preds)
            )
    loss = total_loss / len(clips) if smoothing is not None and clips else None
    return records, loss


def apply_perturbation(clips, noise_sigma, jitter_sigma, seed):
    """Per-clip seeded robustness perturbations (order-independent)."""
    out = []
    for i, clip in enumerate(clips):
        c = clip
        if noise_sigma > 0:
            c = perturb_visual(c, noise_sigma,
                               seed=np.random.SeedSequence([seed, 9, i, 0]))
        if jitter_sigma > 0:
            c = perturb_landmarks(c, jitter_sigma,
                                  seed=np.random.SeedSequence([seed, 9, i, 1]))
        out.append(c)
    return out


def evaluate(model, data_dir, cfg, split="test", noise_sigma=0.0, jitter_sigma=0.0,
             perturbation_name="none"):
    """Forward-only pass over a split; returns (records, report dict)."""
    tune_threads()
    manifest = read_manifest(data_dir)
    data = load_split(data_dir, manifest, split)
    clips = split_to_clips(data)
    eval_seed = cfg["eval"]["seed"]
    clips = apply_perturbation(clips, noise_sigma, jitter_sigma, eval_seed)
    records, _ = _forward_split(model, clips, cfg["eval"]["batch_size"])
    report = {
        "split": split,
        "perturbation": {
            "name": perturbation_name,
            "noise_sigma": noise_sigma,
            "jitter_sigma": jitter_sigma,
        },
        "n": len(records),
        "acc": accuracy(records),
        "macc": mean_accuracy(records),
        "per_speaker": per_speaker_stats(records),
        "config_hash": model.config_hash,
        "seed": eval_seed,
    }
    return records, report


# ---------------------------------------------------------------------------
# protocols


def run_ablation(cfg, data_dir, out_dir=None, log=None):
    """Train the four variants on shared data/seed; emit the comparison table."""
    rows = []
    for name, variant in ablation_variants(cfg):
        result = train(variant, data_dir, log=log)
        _, report = evaluate(result.model, data_dir, variant, split="test")
        rows.append({
            "variant": name,
            "acc": report["acc"],
            "macc": report["macc"],
            "param_count": result.model.param_count(),
            "final_train_acc": result.history[-1]["train_acc"],
        })
        if log:
            log(rows[-1])
    table = {"rows": rows, "config_hash": config_hash(cfg), "seed": cfg["train"]["seed"]}
    if out_dir is not None:
        write_json(os.path.join(out_dir, "ablation.json"), table)
    return table


ROBUST_CONDITIONS = ("clean", "visual_noise", "landmark_perturbation",
                     "noise_and_perturbation")


def run_robustness(model, cfg, data_dir, out_dir=None, split="test"):
    """Evaluate one checkpointed model under the four robustness conditions."""
    sn, sj = cfg["robust"]["noise_sigma"], cfg["robust"]["jitter_sigma"]
    sigmas = {
        "clean": (0.0, 0.0),
        "visual_noise": (sn, 0.0),
        "landmark_perturbation": (0.0, sj),
        "noise_and_perturbation": (sn, sj),
    }
    rows = []
    for name in ROBUST_CONDITIONS:
        noise, jitter = sigmas[name]
        _, report = evaluate(model, data_dir, cfg, split=split, noise_sigma=noise,
                             jitter_sigma=jitter, perturbation_name=name)
        rows.append({"condition": name, "acc": report["acc"], "macc": report["macc"],
                     "n": report["n"]})
    clean_acc = rows[0]["acc"]
    clean_macc = rows[0]["macc"]
    for row in rows:
        row["acc_degradation"] = clean_acc - row["acc"]
        row["macc_degradation"] = clean_macc - row["macc"]
    table = {
        "split": split,
        "rows": rows,
        "sigmas": {"noise": sn, "jitter": sj},
        "config_hash": model.config_hash,
        "seed": cfg["eval"]["seed"],
    }
    if out_dir is not None:
        write_json(os.path.join(out_dir, "robustness.json"), table)
    return table
