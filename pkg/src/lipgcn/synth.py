"""Synthetic lip-clip generator with speaker-disjoint splits.

Each word class is a short articulation program: keyframe targets for mouth
opening, spreading, and rounding, interpolated over the clip. Speakers add
nuisance structure (static shape offsets, global scale, a procedural texture
field, gain/bias) that shows up in the rendered frames but not in the
landmark track, which is exact by construction. Everything is a pure
function of (config, seed).
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataError
from .graphs import N_LANDMARKS, LandmarkSequence, default_flip_permutation

# canonical landmark template, unit mouth coordinates (x right, y down)
OUTER_BASE = np.array([
    (-1.00, 0.00), (-0.72, -0.42), (-0.38, -0.68), (0.00, -0.76),
    (0.38, -0.68), (0.72, -0.42), (1.00, 0.00), (0.72, 0.46),
    (0.38, 0.72), (0.00, 0.80), (-0.38, 0.72), (-0.72, 0.46),
])
INNER_BASE = np.array([
    (-0.60, 0.00), (-0.30, -0.38), (0.00, -0.46), (0.30, -0.38),
    (0.60, 0.00), (0.30, 0.40), (0.00, 0.48), (-0.30, 0.40),
])

AMPLITUDE_PX = 5.2  # template-to-pixel scale at frame_size 16
KEYFRAME_PHASES = 4
PROGRAM_DISTANCE_FLOOR = 0.55


@dataclass
class SynthConfig:
    classes: int = 10
    speakers: int = 12
    train_speakers: int = 8
    clips_per: int = 30  # per class per speaker
    frames: int = 29
    frame_size: int = 16
    val_fraction: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise ConfigError(f"need at least 2 word classes, got {self.classes}")
        if self.speakers < 3:
            raise ConfigError(f"need at least 3 speakers, got {self.speakers}")
        if not (0 < self.train_speakers < self.speakers):
            raise ConfigError(
                f"cannot form an unseen-speaker split from {self.speakers} speakers "
                f"with {self.train_speakers} in training"
            )
        if self.frames < 3:
            raise ConfigError(f"need at least 3 frames per clip, got {self.frames}")


@dataclass
class SpeakerProfile:
    speaker_id: str
    offsets: np.ndarray  # [20,2] pixels, bounded so landmarks stay in-crop
    scale: float
    texture_seed: int
    gain: float
    bias: float


@dataclass
class WordClassSpec:
    index: int
    keyframes: np.ndarray  # [phases, 3] targets for (opening, spreading, rounding)
    timing_jitter: float = 0.06


@dataclass
class SyntheticClip:
    frames: np.ndarray  # [T,H,W] intensity in [0,1]
    landmarks: LandmarkSequence
    speaker_id: str
    label: int
    seed: int


# ---------------------------------------------------------------------------
# deterministic sub-streams


def _rng(*key):
    return np.random.default_rng(np.random.SeedSequence(list(key)))


def make_speaker_profiles(cfg):
    profiles = []
    for i in range(cfg.speakers):
        rng = _rng(cfg.seed, 1, i)
        offsets = np.clip(rng.normal(0.0, 0.18, size=(N_LANDMARKS, 2)), -0.35, 0.35)
        profiles.append(SpeakerProfile(
            speaker_id=f"spk{i:02d}",
            offsets=offsets,
            scale=float(rng.uniform(0.92, 1.08)),
            texture_seed=int(rng.integers(0, 2**31 - 1)),
            gain=float(rng.uniform(0.88, 1.08)),
            bias=float(rng.uniform(-0.04, 0.04)),
        ))
    return profiles


def make_class_specs(cfg):
    """Articulation programs, resampled until pairwise distances clear the floor."""
    rng = _rng(cfg.seed, 2)
    specs = []
    for index in range(cfg.classes):
        for _ in range(200):
            kf = rng.uniform(0.08, 0.92, size=(KEYFRAME_PHASES, 3))
            if all(np.linalg.norm(kf - other.keyframes) >= PROGRAM_DISTANCE_FLOOR
                   for other in specs):
                break
        else:
            raise ConfigError(
                f"could not draw {cfg.classes} distinct articulation programs"
            )
        specs.append(WordClassSpec(index=index, keyframes=kf))
    return specs


# ---------------------------------------------------------------------------
# articulation -> landmarks


def _interp_states(keyframes, keytimes, n_frames):
    """Cosine interpolation of [P,3] keyframes at n_frames uniform fractions."""
    taus = np.linspace(0.0, 1.0, n_frames)
    seg = np.clip(np.searchsorted(keytimes, taus, side="right") - 1, 0, len(keytimes) - 2)
    t0, t1 = keytimes[seg], keytimes[seg + 1]
    u = (taus - t0) / (t1 - t0)
    w = 0.5 * (1.0 - np.cos(math.pi * u))
    return keyframes[seg] * (1.0 - w[:, None]) + keyframes[seg + 1] * w[:, None]


def states_to_landmarks(states, profile, frame_size):
    """[T,3] articulation states -> [T,20,2] pixel coordinates."""
    o, s, r = states[:, 0:1], states[:, 1:2], states[:, 2:3]
    width = 0.78 + 0.42 * s - 0.26 * r
    outer_y = 0.60 + 0.45 * o + 0.18 * r
    inner_w = width * (0.90 - 0.14 * r)
    inner_y = 0.10 + 0.88 * o
    outer = np.empty((states.shape[0], 12, 2))
    inner = np.empty((states.shape[0], 8, 2))
    outer[:, :, 0] = OUTER_BASE[None, :, 0] * width
    outer[:, :, 1] = OUTER_BASE[None, :, 1] * outer_y
    inner[:, :, 0] = INNER_BASE[None, :, 0] * inner_w
    inner[:, :, 1] = INNER_BASE[None, :, 1] * inner_y
    unit = np.concatenate([outer, inner], axis=1)
    center = (frame_size - 1) / 2.0
    amplitude = AMPLITUDE_PX * (frame_size / 16.0)
    coords = center + amplitude * profile.scale * unit + profile.offsets[None]
    if (coords < 0.0).any() or (coords >= frame_size).any():
        raise DataError("generated landmarks left the crop; check profile bounds")
    return coords


# ---------------------------------------------------------------------------
# rendering


def texture_field(texture_seed, frame_size):
    """Smooth per-speaker intensity field: base level plus low-freq gratings."""
    rng = np.random.default_rng(texture_seed)
    yy, xx = np.mgrid[0:frame_size, 0:frame_size].astype(np.float64)
    field_ = np.full((frame_size, frame_size), 0.30)
    for _ in range(3):
        amp = rng.uniform(0.03, 0.06)
        fx, fy = rng.uniform(0.4, 2.2, size=2)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        field_ += amp * np.cos(2.0 * math.pi * (fx * xx + fy * yy) / frame_size + phase)
    return field_


def contour_points(coords_t, per_segment=4):
    """Densify both contour rings of one frame into a point chain [P,2]."""
    pts = []
    for ring in (coords_t[:12], coords_t[12:]):
        nxt = np.roll(ring, -1, axis=0)
        for frac in np.arange(per_segment) / per_segment:
            pts.append(ring + frac * (nxt - ring))
    return np.concatenate(pts, axis=0)


def render_frames(coords, states, profile, frame_size, noise_rng):
    T = coords.shape[0]
    yy, xx = np.mgrid[0:frame_size, 0:frame_size].astype(np.float64)
    texture = texture_field(profile.texture_seed, frame_size)
    frames = np.empty((T, frame_size, frame_size))
    noise = noise_rng.normal(0.0, 0.02, size=frames.shape)
    for t in range(T):
        pts = contour_points(coords[t])
        d2 = np.min(
            (xx[None] - pts[:, 0, None, None]) ** 2 + (yy[None] - pts[:, 1, None, None]) ** 2,
            axis=0,
        )
        ring = 0.75 * np.exp(-d2 / (2.0 * 0.55**2))
        inner = coords[t, 12:]
        c = inner.mean(axis=0)
        rho = np.linalg.norm(inner - c, axis=1).mean()
        sigma_int = max(0.6, 0.55 * rho)
        dc2 = (xx - c[0]) ** 2 + (yy - c[1]) ** 2
        blob = 0.5 * states[t, 0] * np.exp(-dc2 / (2.0 * sigma_int**2))
        frames[t] = profile.gain * (texture + ring - blob) + profile.bias + noise[t]
    return np.clip(frames, 0.0, 1.0)


def contour_consistency(clip):
    """Max over frames of the distance from the brightest pixel to the lip
    contour polyline (generator self-check; should stay within ~1 pixel)."""
    worst = 0.0
    for t in range(clip.frames.shape[0]):
        flat = int(np.argmax(clip.frames[t]))
        row, col = divmod(flat, clip.frames.shape[2])
        pts = contour_points(clip.landmarks.coords[t], per_segment=8)
        d = np.sqrt(((pts - np.array([col, row])) ** 2).sum(axis=1)).min()
        worst = max(worst, float(d))
    return worst


# ---------------------------------------------------------------------------
# clips and datasets


def make_clip(cfg, spec, profile, speaker_idx, clip_idx):
    """One deterministic clip for (class spec, speaker profile, index)."""
    seed_key = (cfg.seed, 3, speaker_idx, spec.index, clip_idx)
    rng = _rng(*seed_key)
    base_times = np.linspace(0.0, 1.0, KEYFRAME_PHASES)
    times = base_times.copy()
    times[1:-1] += rng.uniform(-spec.timing_jitter, spec.timing_jitter,
                               size=KEYFRAME_PHASES - 2)
    times = np.sort(np.clip(times, 0.0, 1.0))
    times[0], times[-1] = 0.0, 1.0
    keyframes = np.clip(spec.keyframes * (1.0 + rng.uniform(-0.05, 0.05,
                                                            size=spec.keyframes.shape)),
                        0.02, 0.98)
    states = _interp_states(keyframes, times, cfg.frames)
    coords = states_to_landmarks(states, profile, cfg.frame_size)
    frames = render_frames(coords, states, profile, cfg.frame_size, rng)
    clip_id = f"{profile.speaker_id}_c{spec.index:02d}_{clip_idx:03d}"
    landmarks = LandmarkSequence(coords=coords, clip_id=clip_id,
                                 speaker_id=profile.speaker_id, label=spec.index,
                                 frame_size=cfg.frame_size)
    return SyntheticClip(frames=frames, landmarks=landmarks,
                         speaker_id=profile.speaker_id, label=spec.index,
                         seed=hash(seed_key) & 0x7FFFFFFF)


def iter_clips(cfg, speaker_indices=None):
    """Yield all clips in deterministic (speaker, class, index) order."""
    profiles = make_speaker_profiles(cfg)
    specs = make_class_specs(cfg)
    for sp_idx in speaker_indices if speaker_indices is not None else range(cfg.speakers):
        for spec in specs:
            for i in range(cfg.clips_per):
                yield make_clip(cfg, spec, profiles[sp_idx], sp_idx, i)


def generate_dataset(cfg):
    """All clips in deterministic order plus speaker-disjoint split id lists."""
    return list(iter_clips(cfg)), split_clip_ids(cfg)


def split_clip_ids(cfg):
    """Deterministic speaker-disjoint train/val/test clip-id lists."""
    profiles = make_speaker_profiles(cfg)
    train_speakers = [p.speaker_id for p in profiles[:cfg.train_speakers]]
    test_speakers = [p.speaker_id for p in profiles[cfg.train_speakers:]]
    ids = {
        sid: [f"{sid}_c{c:02d}_{i:03d}" for c in range(cfg.classes)
              for i in range(cfg.clips_per)]
        for sid in train_speakers + test_speakers
    }
    rng = _rng(cfg.seed, 4)
    train, val = [], []
    for sid in train_speakers:
        pool = list(ids[sid])
        n_val = int(round(cfg.val_fraction * len(pool)))
        chosen = set(rng.choice(len(pool), size=n_val, replace=False)) if n_val else set()
        for j, cid in enumerate(pool):
            (val if j in chosen else train).append(cid)
    test = [cid for sid in test_speakers for cid in ids[sid]]
    return {"train": train, "val": val, "test": test}


# ---------------------------------------------------------------------------
# augmentation and robustness perturbations


def _copy_clip(clip):
    lm = LandmarkSequence(coords=clip.landmarks.coords.copy(),
                          clip_id=clip.landmarks.clip_id,
                          speaker_id=clip.landmarks.speaker_id,
                          label=clip.landmarks.label,
                          frame_size=clip.landmarks.frame_size)
    return replace(clip, frames=clip.frames.copy(), landmarks=lm)


def flip_clip(clip):
    """Mirror frames horizontally and remap landmarks through the left-right
    node permutation; an involution."""
    out = _copy_clip(clip)
    out.frames = np.ascontiguousarray(out.frames[:, :, ::-1])
    perm = default_flip_permutation()
    coords = clip.landmarks.coords[:, perm, :].copy()
    coords[:, :, 0] = (clip.landmarks.frame_size - 1) - coords[:, :, 0]
    out.landmarks.coords = coords
    return out


def mask_time_span(clip, start, length):
    """Replace frames[start:start+length] with the span's mean frame."""
    out = _copy_clip(clip)
    if length > 0:
        span = out.frames[start:start + length]
        out.frames[start:start + length] = span.mean(axis=0)
    return out


def augment(clip, flip_p=0.5, mask_max_len=7, seed=0):
    """Horizontal flip (probability flip_p) plus temporal masking; the label
    and the clip length are unchanged."""
    T = clip.frames.shape[0]
    if mask_max_len > T:
        raise ConfigError(f"mask_max_len {mask_max_len} exceeds clip length {T}")
    rng = np.random.default_rng(seed)
    out = clip
    if rng.random() < flip_p:
        out = flip_clip(out)
    length = int(rng.integers(0, mask_max_len + 1))
    if length > 0:
        start = int(rng.integers(0, T - length + 1))
        out = mask_time_span(out, start, length)
    elif out is clip:
        out = _copy_clip(clip)
    return out


def perturb_visual(clip, sigma, seed=0):
    """Gaussian pixel noise clamped to [0,1]; landmarks untouched."""
    if sigma < 0:
        raise ConfigError(f"noise sigma must be >= 0, got {sigma}")
    out = _copy_clip(clip)
    if sigma == 0:
        return out
    rng = np.random.default_rng(seed)
    out.frames = np.clip(out.frames + rng.normal(0.0, sigma, size=out.frames.shape), 0.0, 1.0)
    return out


def perturb_landmarks(clip, sigma, seed=0):
    """Gaussian coordinate offsets clamped in-crop; frames untouched."""
    if sigma < 0:
        raise ConfigError(f"jitter sigma must be >= 0, got {sigma}")
    out = _copy_clip(clip)
    if sigma == 0:
        return out
    rng = np.random.default_rng(seed)
    coords = out.landmarks.coords + rng.normal(0.0, sigma, size=out.landmarks.coords.shape)
    hi = np.nextafter(float(clip.landmarks.frame_size), 0.0)
    out.landmarks.coords = np.clip(coords, 0.0, hi)
    return out
