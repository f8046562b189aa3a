"""Lip-landmark graphs: contour (LCG), distance-aware (DAG), similarity-aware (SAG).

Node order (fixed, documented here and in the README):

* 0-11: outer contour ring, clockwise from the left mouth corner
  (0 = left corner, 3 = top center, 6 = right corner, 9 = bottom center)
* 12-19: inner contour ring, same convention
  (12 = left corner, 14 = top center, 16 = right corner, 18 = bottom center)

Coordinates are pixels of the cropped frame, x right, y down. All builders
are pure functions of their inputs. SAG construction is built from taped ops
so gradients flow from the adjacency back into the node features; LCG/DAG
depend only on topology/coordinates and carry no gradient.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, GraphConstructionError
from .numerics import Tensor
from .numerics import ops

N_LANDMARKS = 20


@dataclass
class LandmarkSequence:
    """Per-clip lip-contour track: [T,20,2] pixel coordinates plus metadata."""

    coords: np.ndarray
    clip_id: str
    speaker_id: str
    label: int
    frame_size: int

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if c.ndim != 3 or c.shape[1] != N_LANDMARKS or c.shape[2] != 2:
            raise DataError(f"landmark track must be [T,20,2], got {c.shape}")
        if c.shape[0] < 3:
            raise DataError(f"need at least 3 frames, got {c.shape[0]}")
        if (c < 0.0).any() or (c >= self.frame_size).any():
            raise DataError(
                f"clip {self.clip_id}: coordinates outside the [0,{self.frame_size}) crop"
            )
        self.coords = c

    @property
    def n_frames(self):
        return self.coords.shape[0]


@dataclass(frozen=True)
class LipTopology:
    """Two closed contour rings plus cross-ring links at the mouth corners."""

    outer_ring: tuple
    inner_ring: tuple
    corner_pairs: tuple

    def __post_init__(self):
        outer, inner = tuple(self.outer_ring), tuple(self.inner_ring)
        if len(outer) != 12 or len(inner) != 8:
            raise GraphConstructionError(
                f"lip topology needs 12 outer + 8 inner nodes, got {len(outer)} + {len(inner)}"
            )
        if len(set(outer)) != 12 or len(set(inner)) != 8 or set(outer) & set(inner):
            raise GraphConstructionError("topology rings must be disjoint simple cycles")
        if set(outer) | set(inner) != set(range(N_LANDMARKS)):
            raise GraphConstructionError("topology rings must cover node indices 0..19")
        for a, b in self.corner_pairs:
            if not ((a in outer and b in inner) or (a in inner and b in outer)):
                raise GraphConstructionError(f"corner pair {(a, b)} must cross the rings")

    def edges(self):
        """Undirected contour edges: ring one-hop links plus corner cross-links."""
        out = []
        for ring in (self.outer_ring, self.inner_ring):
            for i, a in enumerate(ring):
                out.append((a, ring[(i + 1) % len(ring)]))
        out.extend(tuple(p) for p in self.corner_pairs)
        return out


def default_topology():
    return LipTopology(
        outer_ring=tuple(range(12)),
        inner_ring=tuple(range(12, 20)),
        corner_pairs=((0, 12), (6, 16)),
    )


def default_flip_permutation():
    """Node relabeling under a horizontal mirror of the default topology."""
    perm = np.arange(N_LANDMARKS)
    for a, b in [(0, 6), (1, 5), (2, 4), (7, 11), (8, 10),
                 (12, 16), (13, 15), (17, 19)]:
        perm[a], perm[b] = b, a
    return perm


@dataclass
class AdjacencyMatrix:
    """Named 20x20 (or NxN) nonnegative adjacency with positive diagonal."""

    weights: Tensor
    kind: str
    normalized: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self):
        return self.weights.shape[0]


# ---------------------------------------------------------------------------
# builders


def build_lcg(topology=None):
    """Unweighted contour graph: ring neighbors, corner cross-links, self-loops."""
    topology = topology or default_topology()
    w = np.zeros((N_LANDMARKS, N_LANDMARKS))
    for a, b in topology.edges():
        w[a, b] = 1.0
        w[b, a] = 1.0
    np.fill_diagonal(w, 1.0)
    return AdjacencyMatrix(Tensor(w), kind="LCG", normalized=False)


def mean_pairwise_distances(coords):
    """[T,N,2] pixel track -> [N,N] time-averaged euclidean distances."""
    c = coords.data if isinstance(coords, Tensor) else np.asarray(coords, dtype=np.float64)
    diff = c[:, :, None, :] - c[:, None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1)).mean(axis=0)


def dag_pre_weights(coords, epsilon=1e-3):
    """Pre-normalization DAG weights: 1/(mean distance + eps) off-diagonal,
    row-max on the diagonal."""
    dists = mean_pairwise_distances(coords)
    n = dists.shape[0]
    if not np.isfinite(dists).all():
        raise GraphConstructionError("non-finite landmark distances")
    off = ~np.eye(n, dtype=bool)
    if dists[off].max(initial=0.0) <= 0.0:
        raise GraphConstructionError("all landmarks coincident")
    w = 1.0 / (dists + epsilon)
    np.fill_diagonal(w, 0.0)
    np.fill_diagonal(w, w.max(axis=1))
    return w


def build_dag(coords, epsilon=1e-3, clip_id=None):
    """Distance-aware graph from a [T,N,2] landmark track; row-normalized."""
    try:
        w = dag_pre_weights(coords, epsilon)
    except GraphConstructionError as e:
        tag = f" (clip {clip_id})" if clip_id else ""
        raise GraphConstructionError(f"cannot build DAG{tag}: {e}") from None
    w = w / w.sum(axis=1, keepdims=True)
    return AdjacencyMatrix(Tensor(w), kind="DAG", normalized=True,
                           meta={"epsilon": epsilon})


def dag_weights_batch(coords, epsilon=1e-3, clip_ids=None):
    """Row-normalized DAG weights for a batch of tracks [B,T,N,2] -> [B,N,N].

    Coordinates carry no gradient, so this is plain numpy; the per-clip
    formula matches :func:`build_dag` exactly.
    """
    c = np.asarray(coords, dtype=np.float64)
    B, _, n, _ = c.shape
    diff = c[:, :, :, None, :] - c[:, :, None, :, :]
    dists = np.sqrt((diff * diff).sum(axis=-1)).mean(axis=1)  # [B,N,N]
    off = ~np.eye(n, dtype=bool)
    degenerate = np.where((dists[:, off].max(axis=1) <= 0.0))[0]
    if degenerate.size:
        b = int(degenerate[0])
        name = clip_ids[b] if clip_ids else f"batch index {b}"
        raise GraphConstructionError(f"cannot build DAG ({name}): all landmarks coincident")
    w = 1.0 / (dists + epsilon)
    idx = np.arange(n)
    w[:, idx, idx] = 0.0
    w[:, idx, idx] = w.max(axis=2)
    return w / w.sum(axis=2, keepdims=True)


def cosine_similarity(feats):
    """Taped pre-clamp cosine similarity of node features [...,N,C] -> [...,N,N]."""
    f = feats if isinstance(feats, Tensor) else Tensor(feats)
    if ((f.data * f.data).sum(axis=-1) == 0.0).any():
        raise GraphConstructionError("zero-norm node feature row; cosine undefined")
    dots = ops.matmul(f, ops.transpose(f, tuple(range(f.ndim - 2)) + (f.ndim - 1, f.ndim - 2)))
    norms = ops.sqrt(ops.sum_(ops.mul(f, f), axis=f.ndim - 1, keepdims=True))
    denom = ops.matmul(norms, ops.transpose(norms, tuple(range(f.ndim - 2)) + (f.ndim - 1, f.ndim - 2)))
    return ops.div(dots, denom)


def sag_weights(feats):
    """Row-normalized SAG weights from node features [...,N,C] (differentiable)."""
    cos = cosine_similarity(feats)
    n = cos.shape[-1]
    eye = np.eye(n)
    pre = ops.add(ops.mul(ops.relu(cos), Tensor(1.0 - eye)), Tensor(eye))
    rowsum = ops.sum_(pre, axis=cos.ndim - 1, keepdims=True)
    return ops.div(pre, rowsum)


def build_sag(node_feats):
    """Similarity-aware graph from time-averaged node features [N,C]."""
    w = sag_weights(node_feats)
    return AdjacencyMatrix(w, kind="SAG", normalized=True)


def normalize_adjacency(m):
    """Row-normalize an AdjacencyMatrix (idempotent; errors on a zero row)."""
    rowsum = m.weights.data.sum(axis=1)
    if (rowsum <= 0.0).any():
        raise GraphConstructionError(f"{m.kind}: zero adjacency row, cannot normalize")
    w = ops.div(m.weights, ops.sum_(m.weights, axis=1, keepdims=True))
    return AdjacencyMatrix(w, kind=m.kind, normalized=True, meta=dict(m.meta))


# ---------------------------------------------------------------------------
# node-feature sampling


def landmark_cells(coords, frame_size, grid_hw, tolerance=0.5):
    """Map pixel coords [...,T,N,2] to integer feature-map cells (rows, cols).

    Linear index rescale then round-half-up, clamped to the grid. Coordinates
    beyond the crop by more than ``tolerance`` pixels are a data error.
    """
    c = coords.data if isinstance(coords, Tensor) else np.asarray(coords, dtype=np.float64)
    H, W = grid_hw
    if (c < -tolerance).any() or (c >= frame_size + tolerance).any():
        raise DataError(
            f"landmark coordinates outside the {frame_size}px crop "
            f"(min {c.min():.2f}, max {c.max():.2f})"
        )
    cols = np.floor(c[..., 0] * (W / frame_size) + 0.5).astype(np.intp)
    rows = np.floor(c[..., 1] * (H / frame_size) + 0.5).astype(np.intp)
    return rows.clip(0, H - 1), cols.clip(0, W - 1)


def sample_node_features(feat_map, coords, frame_size):
    """Nearest-cell node features: [B,C,T,H,W] + [T,N,2] (or [B,T,N,2]) -> [B,N,T,C]."""
    feat = feat_map if isinstance(feat_map, Tensor) else Tensor(feat_map)
    rows, cols = landmark_cells(coords, frame_size, feat.shape[3:5])
    return ops.gather_nodes(feat, rows, cols)
