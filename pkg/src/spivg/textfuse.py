"""Query-text conditioning of frame features.

A query vector becomes a text node connected to every video frame (bipartite,
no intra-modal edges). Each frame absorbs the query through a scalar sigmoid
gate: x = v + sigmoid((W1 q) . (W2 v)) * (W3 q + b). Without a query the
features pass through untouched, so unimodal and query-driven datasets share
one pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, SpivgError
from .gradtape import Tape, Tensor, float32_grid


@dataclass
class HeteroGraph:
    n_video: int
    n_queries: int
    edges: list  # (query index, video index) pairs


def build_hetero_graph(n_frames: int, n_queries: int) -> HeteroGraph:
    """Bipartite star per query: an edge from each text node to every frame."""
    if n_frames < 1:
        raise SpivgError("build_hetero_graph: need at least one frame")
    if n_queries < 0:
        raise SpivgError("build_hetero_graph: negative query count")
    edges = [(q, i) for q in range(n_queries) for i in range(n_frames)]
    return HeteroGraph(n_video=n_frames, n_queries=n_queries, edges=edges)


@dataclass
class FusionGate:
    """Gate parameters, stored in right-multiply layout:
    w1 (d_t, d_g), w2 (d_v, d_g), w3 (d_t, d_v), b (d_v,)."""

    w1: Tensor
    w2: Tensor
    w3: Tensor
    b: Tensor

    @property
    def d_text(self) -> int:
        return self.w1.shape[0]

    @property
    def d_video(self) -> int:
        return self.w2.shape[0]


def init_gate(d_text: int, d_video: int, d_gate: int, rng: np.random.Generator) -> FusionGate:
    return FusionGate(
        w1=Tensor(float32_grid(rng.normal(0, 1 / np.sqrt(d_text), (d_text, d_gate))),
                  requires_grad=True),
        w2=Tensor(float32_grid(rng.normal(0, 1 / np.sqrt(d_video), (d_video, d_gate))),
                  requires_grad=True),
        w3=Tensor(float32_grid(rng.normal(0, 1 / np.sqrt(d_text), (d_text, d_video))),
                  requires_grad=True),
        b=Tensor(np.zeros(d_video), requires_grad=True),
    )


def fuse_sequence_op(tape: Tape, gate: FusionGate, query: Tensor, x: Tensor) -> Tensor:
    """Apply the gated text message to every frame of x (T, d_v)."""
    if query.shape != (gate.d_text,):
        raise ShapeError("fuse_sequence", [query.shape, (gate.d_text,)], "query dim")
    if x.data.ndim != 2 or x.shape[1] != gate.d_video:
        raise ShapeError("fuse_sequence", [x.shape, (-1, gate.d_video)], "video dim")
    t = x.shape[0]
    u = tape.matmul(query, gate.w1)                # (d_g,)
    proj = tape.matmul(x, gate.w2)                 # (T, d_g)
    gates = tape.sigmoid(tape.matmul(proj, u))     # (T,)
    msg = tape.add(tape.matmul(query, gate.w3), gate.b)  # (d_v,)
    outer = tape.matmul(tape.reshape(gates, (t, 1)), tape.reshape(msg, (1, gate.d_video)))
    return tape.add(x, outer)


def gated_fuse(gate: FusionGate, v_text: np.ndarray, v_video: np.ndarray) -> np.ndarray:
    """Single-frame fusion; returns the updated video vector."""
    v_video = np.asarray(v_video, dtype=np.float64)
    out = fuse_sequence_op(Tape(), gate, Tensor(np.asarray(v_text, dtype=np.float64)),
                           Tensor(v_video.reshape(1, -1)))
    return out.numpy()[0]


def fuse_sequence(gate: FusionGate | None, query: np.ndarray | None, x: np.ndarray) -> np.ndarray:
    """Numpy-facing fusion; an absent query is the identity."""
    x = np.asarray(x, dtype=np.float64)
    if query is None:
        return x
    if gate is None:
        raise SpivgError("fuse_sequence: query given but no gate parameters")
    return fuse_sequence_op(Tape(), gate, Tensor(np.asarray(query, dtype=np.float64)),
                            Tensor(x)).numpy()


def fuse_queries_op(tape: Tape, gate: FusionGate | None, queries: list, x: Tensor) -> Tensor:
    """Fuse multiple queries sequentially, in the order given."""
    if not queries:
        return x
    if gate is None:
        raise SpivgError("fuse_queries: queries given but no gate parameters")
    h = x
    for q in queries:
        qt = q if isinstance(q, Tensor) else Tensor(np.asarray(q, dtype=np.float64))
        h = fuse_sequence_op(tape, gate, qt, h)
    return h
