"""Synthetic generator: determinism, splits, augmentation, perturbations."""

import numpy as np
import pytest

from lipgcn.errors import ConfigError
from lipgcn.graphs import build_lcg, default_flip_permutation
from lipgcn.synth import (SynthConfig, augment, contour_consistency, flip_clip,
                          iter_clips, make_class_specs, make_clip,
                          make_speaker_profiles, mask_time_span,
                          perturb_landmarks, perturb_visual, split_clip_ids,
                          PROGRAM_DISTANCE_FLOOR)
from tests.conftest import TINY_DATASET


def tiny_cfg(**kw):
    base = dict(TINY_DATASET)
    base.update(kw)
    return SynthConfig(**base)


def all_clips(cfg):
    return list(iter_clips(cfg))


def test_config_validation():
    with pytest.raises(ConfigError):
        tiny_cfg(classes=1)
    with pytest.raises(ConfigError):
        tiny_cfg(speakers=2)
    with pytest.raises(ConfigError):
        tiny_cfg(speakers=4, train_speakers=4)  # no unseen speaker left


def test_generation_deterministic():
    cfg = tiny_cfg()
    a = all_clips(cfg)
    b = all_clips(cfg)
    assert len(a) == cfg.speakers * cfg.classes * cfg.clips_per
    for ca, cb in zip(a, b):
        assert np.array_equal(ca.frames, cb.frames)
        assert np.array_equal(ca.landmarks.coords, cb.landmarks.coords)
        assert ca.landmarks.clip_id == cb.landmarks.clip_id


def test_different_seed_different_data():
    a = all_clips(tiny_cfg())[0]
    b = all_clips(tiny_cfg(seed=99))[0]
    assert not np.array_equal(a.frames, b.frames)


def test_splits_speaker_disjoint():
    cfg = tiny_cfg()
    splits = split_clip_ids(cfg)
    speaker = lambda cid: cid.split("_")[0]
    train_speakers = {speaker(c) for c in splits["train"]}
    val_speakers = {speaker(c) for c in splits["val"]}
    test_speakers = {speaker(c) for c in splits["test"]}
    assert train_speakers & test_speakers == set()
    assert val_speakers <= train_speakers  # val carved from train speakers
    n_total = cfg.speakers * cfg.classes * cfg.clips_per
    assert len(splits["train"]) + len(splits["val"]) + len(splits["test"]) == n_total


def test_class_balance_within_one():
    cfg = tiny_cfg()
    counts = {}
    for clip in all_clips(cfg):
        counts[clip.label] = counts.get(clip.label, 0) + 1
    values = sorted(counts.values())
    assert values[-1] - values[0] <= 1


def test_class_programs_distinct():
    specs = make_class_specs(tiny_cfg(classes=8))
    for i, a in enumerate(specs):
        for b in specs[i + 1:]:
            assert np.linalg.norm(a.keyframes - b.keyframes) >= PROGRAM_DISTANCE_FLOOR


def test_frames_in_unit_interval_and_landmarks_in_crop(sample_clip):
    assert sample_clip.frames.min() >= 0.0 and sample_clip.frames.max() <= 1.0
    coords = sample_clip.landmarks.coords
    assert coords.min() >= 0.0 and coords.max() < sample_clip.landmarks.frame_size


def test_rendered_contour_consistency(sample_clip):
    # brightest pixel per frame sits on the lip contour (within one pixel)
    assert contour_consistency(sample_clip) <= 1.0


def test_flip_is_involution(sample_clip):
    back = flip_clip(flip_clip(sample_clip))
    assert np.array_equal(back.frames, sample_clip.frames)
    # mirroring twice reproduces x up to the rounding of (W-1)-((W-1)-x)
    assert np.abs(back.landmarks.coords - sample_clip.landmarks.coords).max() < 1e-12


def test_flip_mirror_map(sample_clip):
    flipped = flip_clip(sample_clip)
    perm = default_flip_permutation()
    W = sample_clip.landmarks.frame_size
    x = sample_clip.landmarks.coords[..., 0]
    fx = flipped.landmarks.coords[..., 0]
    assert np.abs(fx - ((W - 1) - x[:, perm])).max() < 1e-12
    # y coordinates just follow the node permutation
    assert np.array_equal(flipped.landmarks.coords[..., 1],
                          sample_clip.landmarks.coords[:, perm, 1])


def test_flip_preserves_lcg_topology():
    # LCG is built from topology alone, so flipped landmarks give the same matrix
    before = build_lcg().weights.data
    perm = default_flip_permutation()
    assert np.array_equal(before, before[np.ix_(perm, perm)])


def test_mask_zero_length_identity(sample_clip):
    out = mask_time_span(sample_clip, 2, 0)
    assert np.array_equal(out.frames, sample_clip.frames)


def test_mask_replaces_span_with_mean(sample_clip):
    out = mask_time_span(sample_clip, 1, 3)
    want = sample_clip.frames[1:4].mean(axis=0)
    for t in (1, 2, 3):
        assert np.array_equal(out.frames[t], want)
    assert np.array_equal(out.frames[0], sample_clip.frames[0])
    assert np.array_equal(out.frames[4:], sample_clip.frames[4:])
    assert np.array_equal(out.landmarks.coords, sample_clip.landmarks.coords)


def test_augment_deterministic_and_label_preserving(sample_clip):
    a = augment(sample_clip, flip_p=0.5, mask_max_len=3, seed=7)
    b = augment(sample_clip, flip_p=0.5, mask_max_len=3, seed=7)
    assert np.array_equal(a.frames, b.frames)
    assert a.label == sample_clip.label
    assert a.frames.shape == sample_clip.frames.shape


def test_augment_mask_longer_than_clip_rejected(sample_clip):
    with pytest.raises(ConfigError):
        augment(sample_clip, mask_max_len=sample_clip.frames.shape[0] + 1, seed=0)


def test_perturb_visual_sigma_zero_identity(sample_clip):
    out = perturb_visual(sample_clip, 0.0, seed=3)
    assert np.array_equal(out.frames, sample_clip.frames)
    assert np.array_equal(out.landmarks.coords, sample_clip.landmarks.coords)


def test_perturb_visual_noise_statistics():
    # mid-gray frames avoid clamping, so the empirical std is clean
    from lipgcn.graphs import LandmarkSequence
    from lipgcn.synth import SyntheticClip
    frames = np.full((4, 64, 64), 0.5)
    coords = np.full((4, 20, 2), 30.0)
    clip = SyntheticClip(frames=frames,
                         landmarks=LandmarkSequence(coords, "c", "s", 0, 64),
                         speaker_id="s", label=0, seed=0)
    sigma = 0.03
    out = perturb_visual(clip, sigma, seed=5)
    noise = out.frames - frames
    assert abs(noise.std() - sigma) < 0.1 * sigma
    assert np.array_equal(out.landmarks.coords, coords)


def test_perturb_landmarks_sigma_zero_identity(sample_clip):
    out = perturb_landmarks(sample_clip, 0.0, seed=3)
    assert np.array_equal(out.landmarks.coords, sample_clip.landmarks.coords)
    assert np.array_equal(out.frames, sample_clip.frames)


def test_perturb_landmarks_displacement_statistics():
    from lipgcn.graphs import LandmarkSequence
    from lipgcn.synth import SyntheticClip
    frames = np.full((40, 32, 32), 0.5)
    coords = np.full((40, 20, 2), 16.0)
    clip = SyntheticClip(frames=frames,
                         landmarks=LandmarkSequence(coords, "c", "s", 0, 32),
                         speaker_id="s", label=0, seed=0)
    sigma = 0.4
    out = perturb_landmarks(clip, sigma, seed=11)
    disp = np.linalg.norm(out.landmarks.coords - coords, axis=-1)
    expected = sigma * np.sqrt(np.pi / 2.0)
    assert abs(disp.mean() - expected) < 0.1 * expected
    assert np.array_equal(out.frames, frames)


def test_perturb_landmarks_clamped_in_crop(sample_clip):
    out = perturb_landmarks(sample_clip, 50.0, seed=2)
    size = sample_clip.landmarks.frame_size
    c = out.landmarks.coords
    assert c.min() >= 0.0 and c.max() < size
