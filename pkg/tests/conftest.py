import numpy as np
import pytest

from lipgcn.config import default_config, validate_config
from lipgcn.dataio import write_dataset
from lipgcn.synth import SynthConfig, iter_clips, make_clip, make_class_specs, \
    make_speaker_profiles, split_clip_ids

TINY_DATASET = {
    "classes": 3,
    "speakers": 4,
    "train_speakers": 3,
    "clips_per": 4,
    "frames": 9,
    "frame_size": 12,
    "val_fraction": 0.1,
    "seed": 11,
}


def tiny_config(**train_overrides):
    cfg = default_config()
    cfg["dataset"].update(TINY_DATASET)
    cfg["model"].update({
        "dyn_channels": 4,
        "visual_dim": 16,
        "dyn_kernel": [3, 3, 3],
        "visual_channels": [6, 8],
        "backend": {"dilations": [1, 2], "kernel": 3, "hidden": 16},
    })
    cfg["train"].update({
        "epochs": 2,
        "batch_size": 8,
        "resource_mode": "high",
        "seed": 5,
    })
    cfg["train"].update(train_overrides)
    validate_config(cfg)
    return cfg


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny-data")
    scfg = SynthConfig(**TINY_DATASET)
    write_dataset(scfg, str(out), iter_clips(scfg), split_clip_ids(scfg))
    return str(out)


@pytest.fixture()
def sample_clip():
    scfg = SynthConfig(**TINY_DATASET)
    profile = make_speaker_profiles(scfg)[0]
    spec = make_class_specs(scfg)[1]
    return make_clip(scfg, spec, profile, speaker_idx=0, clip_idx=0)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
