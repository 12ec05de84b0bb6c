"""Shot segmentation and budgeted selection.

Kernel temporal segmentation: exact dynamic programming over candidate
boundaries minimizing total within-segment scatter (linear kernel) plus a
per-segment penalty. Shots are scored by their mean frame score and selected
by an exact 0/1 knapsack under a frame budget, with deterministic
tie-breaking (fewer total frames, then lower shot indices).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, SpivgError


@dataclass
class ShotSegmentation:
    boundaries: list  # strictly increasing, starts at 0, ends at T
    objective: float = 0.0

    def __post_init__(self):
        b = list(int(v) for v in self.boundaries)
        if len(b) < 2 or b[0] != 0 or any(y <= x for x, y in zip(b, b[1:])):
            raise SpivgError(f"invalid shot boundaries {b}")
        self.boundaries = b

    @property
    def shots(self) -> list[tuple[int, int]]:
        return list(zip(self.boundaries[:-1], self.boundaries[1:]))

    @property
    def n_shots(self) -> int:
        return len(self.boundaries) - 1

    def lengths(self) -> list[int]:
        return [b - a for a, b in self.shots]


@dataclass
class SummaryResult:
    frame_scores: np.ndarray
    segmentation: ShotSegmentation
    shot_scores: list
    selected: list  # per-shot booleans
    frame_mask: np.ndarray
    budget_fraction: float


def scatter_matrix(x: np.ndarray) -> np.ndarray:
    """scatter[a, b] = sum of squared deviations from the mean over frames
    [a, b) (zero when b <= a), computed from the linear-kernel Gram matrix."""
    x = np.asarray(x, dtype=np.float64)
    t = x.shape[0]
    gram = x @ x.T
    diag_csum = np.concatenate([[0.0], np.cumsum(np.diag(gram))])
    prefix = np.zeros((t + 1, t + 1))
    prefix[1:, 1:] = np.cumsum(np.cumsum(gram, axis=0), axis=1)
    a = np.arange(t + 1)[:, None]
    b = np.arange(t + 1)[None, :]
    corner = np.diag(prefix)
    # sum of gram over the [a, b) x [a, b) block (prefix is symmetric)
    seg_sum = corner[None, :] + corner[:, None] - prefix - prefix.T
    trace = diag_csum[None, :] - diag_csum[:, None]
    out = trace - seg_sum / np.maximum(b - a, 1)
    out[b <= a] = 0.0
    return out


def kts_segment(x: np.ndarray, max_segments: int, penalty: float) -> ShotSegmentation:
    """Optimal segmentation into at most max_segments shots, minimizing
    total within-segment scatter plus penalty per segment."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ShapeError("kts_segment", [x.shape], "expected a nonempty T x d matrix")
    t = x.shape[0]
    if max_segments < 1:
        raise SpivgError("kts_segment: max_segments must be >= 1")
    if max_segments > t:
        warnings.warn(f"kts_segment: max_segments {max_segments} clamped to {t}")
        max_segments = t
    cost = scatter_matrix(x)

    inf = math.inf
    kmax = max_segments
    # dp[k][j]: best cost of covering frames [0, j) with exactly k segments
    dp = np.full((kmax + 1, t + 1), inf)
    prev = np.zeros((kmax + 1, t + 1), dtype=np.int64)
    dp[0, 0] = 0.0
    for k in range(1, kmax + 1):
        lo = k - 1  # at least k-1 frames consumed by earlier segments
        for j in range(k, t + 1):
            cand = dp[k - 1, lo:j] + (cost[lo:j, j] + penalty)
            best = int(np.argmin(cand))
            dp[k, j] = cand[best]
            prev[k, j] = lo + best
    totals = dp[1:, t]
    k_star = int(np.argmin(totals)) + 1  # ties: fewest segments
    boundaries = [t]
    j = t
    for k in range(k_star, 0, -1):
        j = int(prev[k, j])
        boundaries.append(j)
    boundaries.reverse()
    return ShotSegmentation(boundaries=boundaries, objective=float(totals[k_star - 1]))


def shot_scores(frame_scores: np.ndarray, seg: ShotSegmentation) -> list[float]:
    """Mean frame score per shot."""
    frame_scores = np.asarray(frame_scores, dtype=np.float64)
    if frame_scores.shape[0] != seg.boundaries[-1]:
        raise ShapeError("shot_scores", [frame_scores.shape, (seg.boundaries[-1],)])
    return [float(np.mean(frame_scores[a:b])) for a, b in seg.shots]


def _better(a, b):
    """Knapsack cell ordering: higher value, then fewer frames, then
    lexicographically smaller selection."""
    if a[0] != b[0]:
        return a[0] > b[0]
    if a[1] != b[1]:
        return a[1] < b[1]
    return a[2] < b[2]


def knapsack_select(scores, lengths, budget_frames: int) -> list[bool]:
    """Exact 0/1 knapsack: maximize total score subject to total length
    <= budget_frames. Deterministic for ties."""
    n = len(scores)
    if len(lengths) != n:
        raise ShapeError("knapsack_select", [(n,), (len(lengths),)])
    lengths = [int(w) for w in lengths]
    if any(w <= 0 for w in lengths):
        raise SpivgError("knapsack_select: lengths must be positive")
    if budget_frames < 0:
        raise SpivgError("knapsack_select: negative budget")
    best = [(0.0, 0, ())] * (budget_frames + 1)
    for i in range(n):
        w, v = lengths[i], float(scores[i])
        if w > budget_frames:
            continue
        for c in range(budget_frames, w - 1, -1):
            base = best[c - w]
            cand = (base[0] + v, base[1] + w, base[2] + (i,))
            if _better(cand, best[c]):
                best[c] = cand
    final = best[budget_frames]
    chosen = set(final[2])
    return [i in chosen for i in range(n)]


def assemble_summary(x: np.ndarray, frame_scores: np.ndarray, budget_fraction: float,
                     max_segments: int | None = None, penalty: float | None = None) -> SummaryResult:
    """KTS shots -> mean shot scores -> knapsack under floor(budget * T) frames."""
    x = np.asarray(x, dtype=np.float64)
    frame_scores = np.asarray(frame_scores, dtype=np.float64)
    if not 0.0 < budget_fraction <= 1.0:
        raise SpivgError(f"budget_fraction {budget_fraction} outside (0, 1]")
    t = x.shape[0]
    if frame_scores.shape != (t,):
        raise ShapeError("assemble_summary", [x.shape, frame_scores.shape])
    if max_segments is None:
        max_segments = max(1, t // 20)
    if penalty is None:
        penalty = float(x.shape[1]) * math.log(max(t, 2))
    seg = kts_segment(x, max_segments, penalty)
    scores = shot_scores(frame_scores, seg)
    budget = int(math.floor(budget_fraction * t))
    selected = knapsack_select(scores, seg.lengths(), budget)
    mask = np.zeros(t, dtype=np.int64)
    for picked, (a, b) in zip(selected, seg.shots):
        if picked:
            mask[a:b] = 1
    return SummaryResult(
        frame_scores=frame_scores,
        segmentation=seg,
        shot_scores=scores,
        selected=selected,
        frame_mask=mask,
        budget_fraction=budget_fraction,
    )
