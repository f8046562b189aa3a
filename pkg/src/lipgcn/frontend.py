"""Visual frontend: local dynamic features (3-D conv) and frame-wise embedding.

The dynamic extractor preserves the input's (T,H,W) exactly; time is padded
by edge replication so a clip that is constant in time yields features that
are constant in time, even at the boundaries. The frame-wise extractor is a
small weight-shared per-frame stack (two strided 2-D conv blocks, global
average pooling, linear map), so it is equivariant to frame permutations.
"""

from dataclasses import dataclass, field

from .errors import ConfigError, UsageError
from .numerics import Tensor
from .numerics import ops


@dataclass
class FrontendConfig:
    dyn_channels: int = 8
    visual_dim: int = 64
    frame_size: int = 16
    dyn_kernel: tuple = (3, 5, 5)
    visual_channels: tuple = (12, 24)

    def __post_init__(self):
        if any(k % 2 == 0 for k in self.dyn_kernel):
            raise ConfigError(f"dynamic kernel extents must be odd, got {self.dyn_kernel}")
        if self.dyn_channels < 1 or self.visual_dim < 1:
            raise ConfigError("dyn_channels and visual_dim must be positive")


class DynamicExtractor:
    """E_d: [B,1,T,H,W] grayscale clip -> [B,C,T,H,W] bounded dynamic features."""

    def __init__(self, cfg, registry, prefix="frontend.dyn"):
        self.cfg = cfg
        kt, kh, kw = cfg.dyn_kernel
        self.kernel = registry.xavier_normal(f"{prefix}.kernel", (cfg.dyn_channels, 1, kt, kh, kw))
        self.bias = registry.zeros(f"{prefix}.bias", (cfg.dyn_channels,))

    def extract_dynamic(self, frames):
        if not isinstance(frames, Tensor):
            frames = Tensor(frames)
        if frames.ndim != 5 or frames.shape[1] != 1:
            raise UsageError(f"expected frames [B,1,T,H,W], got {frames.shape}")
        B, _, T, H, W = frames.shape
        if B == 0:
            raise UsageError("zero-size batch")
        if T < 3:
            raise UsageError(f"need at least 3 frames, got {T}")
        pt = self.cfg.dyn_kernel[0] // 2
        x = ops.replicate_pad(frames, axis=2, pad=pt)
        y = ops.conv3d_local(x, self.kernel)
        y = ops.narrow(y, axis=2, start=pt, length=T)
        y = ops.add(y, ops.reshape(self.bias, (1, self.cfg.dyn_channels, 1, 1, 1)))
        return ops.tanh(y)

    __call__ = extract_dynamic


class VisualExtractor:
    """E_v: [B,C,T,H,W] dynamic features -> [B,T,D] per-frame embeddings."""

    def __init__(self, cfg, registry, prefix="frontend.vis"):
        self.cfg = cfg
        c_in = cfg.dyn_channels
        c1, c2 = cfg.visual_channels
        self.k1 = registry.he_normal(f"{prefix}.conv1.kernel", (c1, c_in, 3, 3))
        self.b1 = registry.zeros(f"{prefix}.conv1.bias", (c1,))
        self.k2 = registry.he_normal(f"{prefix}.conv2.kernel", (c2, c1, 3, 3))
        self.b2 = registry.zeros(f"{prefix}.conv2.bias", (c2,))
        self.w = registry.lecun_uniform(f"{prefix}.proj.w", (c2, cfg.visual_dim), fan_in=c2)
        self.b = registry.zeros(f"{prefix}.proj.b", (cfg.visual_dim,))

    def extract_visual(self, dyn):
        if not isinstance(dyn, Tensor):
            dyn = Tensor(dyn)
        B, C, T, H, W = dyn.shape
        c1, c2 = self.cfg.visual_channels
        x = ops.transpose(dyn, (0, 2, 1, 3, 4))
        x = ops.reshape(x, (B * T, C, H, W))
        h = ops.relu(ops.add(ops.conv2d_spatial(x, self.k1, stride=2),
                             ops.reshape(self.b1, (1, c1, 1, 1))))
        h = ops.relu(ops.add(ops.conv2d_spatial(h, self.k2, stride=2),
                             ops.reshape(self.b2, (1, c2, 1, 1))))
        h = ops.mean(ops.reshape(h, (B * T, c2, h.shape[2] * h.shape[3])), axis=2)
        out = ops.linear(h, self.w, self.b)
        return ops.reshape(out, (B, T, self.cfg.visual_dim))

    __call__ = extract_visual


@dataclass
class Frontend:
    dynamic: DynamicExtractor = field(repr=False, default=None)
    visual: VisualExtractor = field(repr=False, default=None)

    @classmethod
    def build(cls, cfg, registry):
        return cls(DynamicExtractor(cfg, registry), VisualExtractor(cfg, registry))
