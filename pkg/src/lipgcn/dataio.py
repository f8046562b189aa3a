"""On-disk formats: dataset directories, checkpoints, reports.

* Tensor file: magic ``LGT1``, uint32 ndim, ndim x uint64 extents, then
  row-major little-endian float64 data.
* Landmark interchange: JSON lines, one record per clip with
  {clip_id, speaker_id, label, frame_size, coords: T x 20 x [x, y]}.
* Dataset directory: ``manifest.json`` + ``landmarks.jsonl`` +
  ``frames/<clip_id>.bin``.
* Checkpoint: magic ``LGCK``, uint32 version, uint64 header length, JSON
  header (config, seed, parameter names/shapes, optimizer scalars), then the
  concatenated float64 buffers (parameters, then first/second moments).

All writes go through a temp-file + rename so outputs are atomic. JSON is
serialized with sorted keys so identical runs produce identical bytes.
"""

import json
import os
import struct
import tempfile

import numpy as np

from .errors import CheckpointError, DataError
from .graphs import LandmarkSequence
from .synth import SyntheticClip

TENSOR_MAGIC = b"LGT1"
CHECKPOINT_MAGIC = b"LGCK"
CHECKPOINT_VERSION = 1


def atomic_write_bytes(path, payload):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_json(path, obj):
    atomic_write_bytes(path, canonical_json(obj).encode("utf-8"))


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# flat binary tensor files


def tensor_bytes(arr):
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    header = TENSOR_MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + arr.astype("<f8").tobytes()


def write_tensor(path, arr):
    atomic_write_bytes(path, tensor_bytes(arr))


def read_tensor(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != TENSOR_MAGIC:
        raise DataError(f"{path}: not a tensor file (bad magic {blob[:4]!r})")
    ndim = struct.unpack_from("<I", blob, 4)[0]
    shape = struct.unpack_from(f"<{ndim}Q", blob, 8)
    offset = 8 + 8 * ndim
    expected = int(np.prod(shape)) * 8
    if len(blob) - offset != expected:
        raise DataError(f"{path}: payload size {len(blob) - offset} != expected {expected}")
    return np.frombuffer(blob, dtype="<f8", offset=offset).reshape(shape).copy()


# ---------------------------------------------------------------------------
# landmark interchange (JSON lines)


def landmark_record(seq):
    return {
        "clip_id": seq.clip_id,
        "speaker_id": seq.speaker_id,
        "label": int(seq.label),
        "frame_size": int(seq.frame_size),
        "coords": [[[float(x), float(y)] for x, y in frame] for frame in seq.coords],
    }


def parse_landmark_record(obj, line_no=None):
    where = f"landmark record line {line_no}" if line_no is not None else "landmark record"
    for key in ("clip_id", "speaker_id", "label", "frame_size", "coords"):
        if key not in obj:
            raise DataError(f"{where}: missing field {key!r}")
    try:
        return LandmarkSequence(
            coords=np.asarray(obj["coords"], dtype=np.float64),
            clip_id=obj["clip_id"],
            speaker_id=obj["speaker_id"],
            label=int(obj["label"]),
            frame_size=int(obj["frame_size"]),
        )
    except (TypeError, ValueError, DataError) as e:
        raise DataError(f"{where}: {e}") from None


def read_landmark_file(path, clip_id=None):
    """Read one record (the first, or the matching clip_id) from a JSONL file."""
    records = read_all_landmarks(path)
    if clip_id is None:
        if not records:
            raise DataError(f"{path}: no landmark records")
        return next(iter(records.values()))
    if clip_id not in records:
        raise DataError(f"{path}: no record for clip {clip_id!r}")
    return records[clip_id]


def read_all_landmarks(path):
    records = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path} line {line_no}: invalid JSON ({e.msg})") from None
            seq = parse_landmark_record(obj, line_no=line_no)
            records[seq.clip_id] = seq
    return records


# ---------------------------------------------------------------------------
# dataset directories


def write_dataset(cfg, out_dir, clips_iter, splits):
    """Stream clips to a dataset directory and return the manifest."""
    frames_dir = os.path.join(out_dir, "frames")
    os.makedirs(frames_dir, exist_ok=True)
    clip_index = {}
    lines = []
    for clip in clips_iter:
        cid = clip.landmarks.clip_id
        write_tensor(os.path.join(frames_dir, f"{cid}.bin"), clip.frames)
        lines.append(json.dumps(landmark_record(clip.landmarks), sort_keys=True))
        clip_index[cid] = {
            "speaker_id": clip.speaker_id,
            "label": int(clip.label),
            "frames_file": f"frames/{cid}.bin",
        }
    atomic_write_bytes(os.path.join(out_dir, "landmarks.jsonl"),
                       ("\n".join(lines) + "\n").encode("utf-8"))
    manifest = {
        "format": "lipgcn-dataset-v1",
        "generator": {
            "classes": cfg.classes,
            "speakers": cfg.speakers,
            "train_speakers": cfg.train_speakers,
            "clips_per": cfg.clips_per,
            "frames": cfg.frames,
            "frame_size": cfg.frame_size,
            "val_fraction": cfg.val_fraction,
            "seed": cfg.seed,
        },
        "splits": splits,
        "clips": clip_index,
    }
    write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


def read_manifest(data_dir):
    path = os.path.join(data_dir, "manifest.json")
    if not os.path.exists(path):
        raise DataError(f"no dataset manifest at {path}")
    manifest = read_json(path)
    if manifest.get("format") != "lipgcn-dataset-v1":
        raise DataError(f"{path}: unknown dataset format {manifest.get('format')!r}")
    return manifest


def load_split(data_dir, manifest, split):
    """Load one split fully into memory as stacked arrays."""
    if split not in manifest["splits"]:
        raise DataError(f"unknown split {split!r}; have {sorted(manifest['splits'])}")
    ids = manifest["splits"][split]
    landmarks = read_all_landmarks(os.path.join(data_dir, "landmarks.jsonl"))
    frames, coords, labels, speakers = [], [], [], []
    for cid in ids:
        info = manifest["clips"][cid]
        frames.append(read_tensor(os.path.join(data_dir, info["frames_file"])))
        seq = landmarks[cid]
        coords.append(seq.coords)
        labels.append(info["label"])
        speakers.append(info["speaker_id"])
    return {
        "clip_ids": list(ids),
        "frames": np.stack(frames) if frames else np.zeros((0,)),
        "coords": np.stack(coords) if coords else np.zeros((0,)),
        "labels": np.asarray(labels, dtype=np.int64),
        "speakers": speakers,
        "frame_size": manifest["generator"]["frame_size"],
    }


def split_to_clips(data):
    """View a loaded split as SyntheticClip objects (shared arrays)."""
    out = []
    for i, cid in enumerate(data["clip_ids"]):
        lm = LandmarkSequence(coords=data["coords"][i], clip_id=cid,
                              speaker_id=data["speakers"][i],
                              label=int(data["labels"][i]),
                              frame_size=data["frame_size"])
        out.append(SyntheticClip(frames=data["frames"][i], landmarks=lm,
                                 speaker_id=data["speakers"][i],
                                 label=int(data["labels"][i]), seed=0))
    return out


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params, opt_state, config, config_hash, seed):
    """params: ordered (name -> array); opt_state: dict with step/lr/... and
    moment arrays aligned with the parameter order."""
    names = list(params)
    header = {
        "version": CHECKPOINT_VERSION,
        "config": config,
        "config_hash": config_hash,
        "seed": seed,
        "params": [{"name": n, "shape": list(params[n].shape)} for n in names],
        "optimizer": {k: v for k, v in opt_state.items() if k not in ("m", "v")},
        "has_moments": "m" in opt_state,
    }
    head = canonical_json(header).encode("utf-8")
    buffers = [params[n] for n in names]
    if "m" in opt_state:
        buffers.extend(opt_state["m"][n] for n in names)
        buffers.extend(opt_state["v"][n] for n in names)
    blob = CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION)
    blob += struct.pack("<Q", len(head)) + head
    blob += b"".join(np.ascontiguousarray(b, dtype="<f8").tobytes() for b in buffers)
    atomic_write_bytes(path, blob)


def load_checkpoint(path):
    if not os.path.exists(path):
        raise DataError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic {blob[:4]!r})")
    version = struct.unpack_from("<I", blob, 4)[0]
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    hlen = struct.unpack_from("<Q", blob, 8)[0]
    header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    offset = 16 + hlen
    params = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
        params[entry["name"]] = arr.copy()
        offset += count * 8
    moments = None
    if header.get("has_moments"):
        moments = {"m": {}, "v": {}}
        for key in ("m", "v"):
            for entry in header["params"]:
                shape = tuple(entry["shape"])
                count = int(np.prod(shape)) if shape else 1
                arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
                moments[key][entry["name"]] = arr.copy()
                offset += count * 8
    return {
        "config": header["config"],
        "config_hash": header["config_hash"],
        "seed": header["seed"],
        "params": params,
        "optimizer": header["optimizer"],
        "moments": moments,
    }
