"""Dynamic aggregation graph reasoner.

Frames become nodes of three temporal graphs (forward, backward, undirected;
edges between frames closer than a window W). Each reasoner layer projects
node states, keeps only neighbors whose absolute cosine similarity to the
center exceeds a threshold, mean-aggregates the survivors, pushes the mean
through a two-layer GELU feed-forward block and adds the result back onto the
node. A linear+sigmoid readout turns final states into per-frame scores.

The neighbor-membership indicator is treated as a constant during backward
(straight-through on the filtered set), so the filter projection receives no
gradient and is stored as a non-trainable buffer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, SpivgError
from .gradtape import Tape, Tensor

GRAPH_KINDS = ("forward", "backward", "undirected")


@dataclass
class FrameGraph:
    n_nodes: int
    kind: str
    window: int
    neighbors: list  # per-node integer arrays
    _mask: np.ndarray | None = None

    def adjacency_mask(self) -> np.ndarray:
        if self._mask is None:
            m = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
            for i, nb in enumerate(self.neighbors):
                m[i, nb] = True
            self._mask = m
        return self._mask


def build_graphs(n_frames: int, window: int):
    """Forward/backward/undirected temporal graphs over n_frames nodes."""
    if n_frames < 1:
        raise SpivgError("build_graphs: need at least one frame")
    if window < 1:
        raise SpivgError("build_graphs: window must be >= 1")
    idx = np.arange(n_frames)
    fwd, bwd, und = [], [], []
    for i in range(n_frames):
        past = idx[max(0, i - window):i]
        future = idx[i + 1:i + 1 + window]
        fwd.append(past.copy())
        bwd.append(future.copy())
        und.append(np.concatenate([past, future]))
    return (
        FrameGraph(n_frames, "forward", window, fwd),
        FrameGraph(n_frames, "backward", window, bwd),
        FrameGraph(n_frames, "undirected", window, und),
    )


@dataclass
class LayerParams:
    w_filter: Tensor  # (d, d_f) buffer, straight-through: no gradient
    w1: Tensor        # (d, d)
    b1: Tensor        # (d,)
    w2: Tensor        # (d, d)
    b2: Tensor        # (d,)


@dataclass
class ReasonerChannel:
    dim: int
    tau_cos: float
    layers: list = field(default_factory=list)
    readout_w: Tensor | None = None  # (d,)
    readout_b: Tensor | None = None  # ()

    def __post_init__(self):
        if not 0.0 < self.tau_cos < 1.0:
            raise SpivgError(f"reasoner: tau_cos must be in (0,1), got {self.tau_cos}")


def init_channel(dim: int, n_layers: int, tau_cos: float, rng: np.random.Generator,
                 filter_dim: int | None = None) -> ReasonerChannel:
    from .gradtape import float32_grid

    d_f = dim if filter_dim is None else filter_dim
    ch = ReasonerChannel(dim=dim, tau_cos=tau_cos)
    scale = 1.0 / np.sqrt(dim)
    for _ in range(n_layers):
        ch.layers.append(LayerParams(
            w_filter=Tensor(float32_grid(rng.normal(0.0, scale, size=(dim, d_f)))),
            w1=Tensor(float32_grid(rng.normal(0.0, scale, size=(dim, dim))), requires_grad=True),
            b1=Tensor(np.zeros(dim), requires_grad=True),
            w2=Tensor(float32_grid(rng.normal(0.0, scale, size=(dim, dim))), requires_grad=True),
            b2=Tensor(np.zeros(dim), requires_grad=True),
        ))
    ch.readout_w = Tensor(float32_grid(rng.normal(0.0, scale, size=dim)), requires_grad=True)
    ch.readout_b = Tensor(np.asarray(0.0), requires_grad=True)
    return ch


def filter_neighbors(layer: LayerParams, h: np.ndarray, i: int, neighbors,
                     tau_cos: float) -> np.ndarray:
    """Neighbors of node i whose |cosine| against node i (after the filter
    projection) exceeds tau_cos. Zero-norm projections count as similarity 0."""
    keep = _filtered_adjacency_row(h @ layer.w_filter.data, i, np.asarray(neighbors), tau_cos)
    return np.asarray(neighbors)[keep]


def _filtered_adjacency_row(f_h, i, neighbors, tau_cos):
    if neighbors.size == 0:
        return np.zeros(0, dtype=bool)
    fi = f_h[i]
    fn = f_h[neighbors]
    ni = np.linalg.norm(fi)
    nn = np.linalg.norm(fn, axis=1)
    ok = (ni > 0) & (nn > 0)
    cos = np.zeros(len(neighbors))
    if ni > 0:
        cos[ok] = (fn[ok] @ fi) / (nn[ok] * ni)
    return np.abs(cos) > tau_cos


def filtered_mean_matrix(layer: LayerParams, h: np.ndarray, graph: FrameGraph,
                         tau_cos: float):
    """(A, nonempty) where A row i averages the filtered neighbors of i and
    nonempty marks rows with at least one survivor. A is constant w.r.t. the
    backward pass (straight-through membership)."""
    f_h = h @ layer.w_filter.data
    norms = np.linalg.norm(f_h, axis=1)
    unit = f_h / np.where(norms > 0, norms, 1.0)[:, None]
    cos = unit @ unit.T
    kept = (np.abs(cos) > tau_cos) & graph.adjacency_mask()
    counts = kept.sum(axis=1)
    nonempty = (counts > 0).astype(np.float64)
    a = kept / np.maximum(counts, 1)[:, None]
    return a, nonempty


def aggregate_layer(tape: Tape, layer: LayerParams, h: Tensor, graph: FrameGraph,
                    tau_cos: float, dropout_keep: float = 1.0,
                    rng: np.random.Generator | None = None) -> Tensor:
    """One reasoner layer: filtered neighbor mean -> FFN -> residual add.
    Nodes with no surviving neighbors pass through unchanged."""
    if h.shape[0] != graph.n_nodes:
        raise ShapeError("aggregate_layer", [h.shape, (graph.n_nodes,)],
                         "node count mismatch")
    a, nonempty = filtered_mean_matrix(layer, h.data, graph, tau_cos)
    mean = tape.matmul(Tensor(a), h)
    mean = tape.dropout(mean, dropout_keep, rng)
    hidden = tape.gelu(tape.add(tape.matmul(mean, layer.w1), layer.b1))
    ffn = tape.add(tape.matmul(hidden, layer.w2), layer.b2)
    gated = tape.hadamard(Tensor(nonempty.reshape(-1, 1)), ffn)
    return tape.add(h, gated)


def channel_forward(tape: Tape, channel: ReasonerChannel, x: Tensor, graph: FrameGraph,
                    dropout_keep: float = 1.0,
                    rng: np.random.Generator | None = None) -> Tensor:
    """Run all layers from h^0 = x, then the per-node sigmoid readout."""
    if x.data.ndim != 2 or x.shape[1] != channel.dim:
        raise ShapeError("channel_forward", [x.shape, (graph.n_nodes, channel.dim)])
    if x.shape[0] != graph.n_nodes:
        raise ShapeError("channel_forward", [x.shape, (graph.n_nodes, channel.dim)],
                         "graph size mismatch")
    h = x
    for layer in channel.layers:
        h = aggregate_layer(tape, layer, h, graph, channel.tau_cos, dropout_keep, rng)
    h = tape.dropout(h, dropout_keep, rng)
    logits = tape.add(tape.matmul(h, channel.readout_w), channel.readout_b)
    return tape.sigmoid(logits)


def channel_scores(channel: ReasonerChannel, x: np.ndarray, graph: FrameGraph) -> np.ndarray:
    """Inference-mode scores (no dropout), plain arrays in and out."""
    return channel_forward(Tape(), channel, Tensor(x), graph).numpy()
