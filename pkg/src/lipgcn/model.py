"""Assembly of the full lipreading model from a resolved configuration.

Forward pass: grayscale clip -> dynamic features (3-D conv) -> frame-wise
visual features; in parallel the landmark track drives up to three graph
branches (contour / distance / similarity) over node features sampled from
the dynamic feature map; branch outputs are fused and merged with the visual
features, then temporally aggregated and classified.

The distance-aware adjacency is built per clip from the landmark track (no
gradient path); the similarity-aware adjacency is built per clip from the
time-averaged sampled features and is differentiated through.
"""

import numpy as np

from .backend import ClassifierHead, TemporalAggregator, label_smoothed_ce
from .config import backend_config, config_hash, enabled_graphs, frontend_config
from .errors import DimensionError, GraphConstructionError, UsageError
from .frontend import Frontend
from .fusion import CatReduce, FusionModule, FusionSpec, merge_with_visual
from .graphs import (build_lcg, dag_weights_batch, normalize_adjacency,
                     sag_weights, sample_node_features)
from .numerics import Tensor, ops
from .params import ParamRegistry
from .stgcn import make_branch, run_branch

GRAPH_ORDER = ("lcg", "dag", "sag")


class LipReadingModel:
    def __init__(self, cfg, seed):
        self.cfg = cfg
        self.seed = seed
        self.config_hash = config_hash(cfg)
        self.frontend_cfg = frontend_config(cfg)
        self.backend_cfg = backend_config(cfg)
        model_cfg = cfg["model"]
        self.graphs = enabled_graphs(model_cfg)
        self.merge_mode = model_cfg["merge_mode"]
        dim = self.frontend_cfg.visual_dim
        channels = self.frontend_cfg.dyn_channels

        reg = ParamRegistry(seed)
        self.registry = reg
        self.frontend = Frontend.build(self.frontend_cfg, reg)

        self.branches = {}
        self.lift_w = self.lift_b = None
        size_before = {}
        for name in self.graphs:
            before = reg.total_size()
            if name == "lcg":
                self.lift_w = reg.xavier_normal("branch.lcg.lift.w", (2, channels))
                self.lift_b = reg.zeros("branch.lcg.lift.b", (channels,))
            self.branches[name] = make_branch(
                name, channels, dim, reg, n_layers=model_cfg["branch_layers"]
            )
            size_before[name] = reg.total_size() - before
        self._branch_sizes = size_before

        self.fusion = None
        if len(self.graphs) >= 2:
            spec = FusionSpec(mode=model_cfg["fusion_mode"], operands=self.graphs,
                              reduce_dim=dim)
            self.fusion = FusionModule(spec, reg)

        self.merge_reduce = None
        if self.graphs and self.merge_mode == "cat":
            self.merge_reduce = CatReduce([dim, dim], dim, reg, "merge.cat")

        self.aggregator = TemporalAggregator(dim, self.backend_cfg, reg)
        self.head = ClassifierHead(dim, self.backend_cfg.hidden,
                                   self.backend_cfg.classes, reg)

        self.lcg_weights = None
        if "lcg" in self.graphs:
            self.lcg_weights = normalize_adjacency(build_lcg()).weights.detach()

    # -- parameters ---------------------------------------------------------

    def parameters(self):
        return self.registry.items()

    def param_count(self):
        return self.registry.total_size()

    def branch_param_count(self, name):
        return self._branch_sizes.get(name, 0)

    def zero_grad(self):
        self.registry.zero_grad()

    # -- forward ------------------------------------------------------------

    def _lcg_node_features(self, coords):
        # pixel coords -> [-1,1] conditioning, then a learned lift to C channels
        half = self.frontend_cfg.frame_size / 2.0
        scaled = coords / half - 1.0
        node = Tensor(np.ascontiguousarray(scaled.transpose(0, 2, 1, 3)))  # [B,N,T,2]
        return ops.linear(node, self.lift_w, self.lift_b)

    def forward(self, frames, coords):
        """frames [B,1,T,H,W] (Tensor or array), coords [B,T,20,2] pixels."""
        if not isinstance(frames, Tensor):
            frames = Tensor(frames)
        coords = np.asarray(coords, dtype=np.float64)
        if frames.ndim != 5:
            raise UsageError(f"frames must be [B,1,T,H,W], got {frames.shape}")
        if coords.ndim != 4 or coords.shape[0] != frames.shape[0] \
                or coords.shape[1] != frames.shape[2]:
            raise DimensionError(
                f"coords {coords.shape} do not match frames {frames.shape}"
            )
        fd = self.frontend.dynamic(frames)
        fv = self.frontend.visual(fd)
        if not self.graphs:
            return self.head(self.aggregator(fv))

        sampled = None
        if "dag" in self.graphs or "sag" in self.graphs:
            sampled = sample_node_features(fd, coords, self.frontend_cfg.frame_size)

        feats = {}
        for name in self.graphs:
            if name == "lcg":
                f_node = self._lcg_node_features(coords)
                adjacency = Tensor(self.lcg_weights.data)
            elif name == "dag":
                f_node = sampled
                adjacency = Tensor(dag_weights_batch(coords))
            else:  # sag
                f_node = sampled
                adjacency = sag_weights(ops.mean(sampled, axis=2))
            feats[name] = run_branch(f_node, self.branches[name], adjacency)

        if len(self.graphs) == 1:
            f_graph = next(iter(feats.values()))
        else:
            f_graph = self.fusion(feats)

        if self.merge_mode == "cat":
            merged = ops.linear(ops.concat([f_graph, fv], axis=2),
                                self.merge_reduce.w, self.merge_reduce.b)
        else:
            merged = merge_with_visual(f_graph, fv)
        return self.head(self.aggregator(merged))

    def loss_and_logits(self, frames, coords, labels):
        logits = self.forward(frames, coords)
        loss = label_smoothed_ce(logits, labels, self.cfg["model"]["smoothing"])
        return loss, logits

    @staticmethod
    def predict(logits):
        data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
        return np.argmax(data, axis=1)


def build_model(cfg, seed):
    return LipReadingModel(cfg, seed)


def ablation_variants(cfg):
    """The four ablation rows: flags plus a compatible fusion mode each."""
    import copy

    rows = []
    for name, flags, mode in (
        ("baseline", (False, False, False), "composite"),
        ("dag", (False, True, False), "composite"),
        ("dag_lcg", (True, True, False), "sum2"),
        ("dag_lcg_sag", (True, True, True), cfg["model"]["fusion_mode"]),
    ):
        variant = copy.deepcopy(cfg)
        variant["model"]["use_lcg"], variant["model"]["use_dag"], \
            variant["model"]["use_sag"] = flags
        variant["model"]["fusion_mode"] = mode
        rows.append((name, variant))
    return rows
