"""Evaluation metrics: keyshot F1 against annotators, tie-corrected rank
correlations, and precision/recall triples for query-focused summaries.

Kendall's tau is the tau-b variant (heavy ties are the norm for summary
scores); concordant/discordant and tie counts are exact integers, so the
result is reproducible bit for bit. Constant inputs make both correlations
undefined and return None rather than 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, SpivgError


@dataclass
class AnnotationSet:
    user_summaries: list | None = None
    importance_scores: list | None = None

    def __post_init__(self):
        if self.user_summaries is not None:
            self.user_summaries = [np.asarray(u) for u in self.user_summaries]
        if self.importance_scores is not None:
            self.importance_scores = [np.asarray(s, dtype=np.float64)
                                      for s in self.importance_scores]
        lengths = {len(u) for u in (self.user_summaries or [])}
        lengths |= {len(s) for s in (self.importance_scores or [])}
        if len(lengths) > 1:
            raise ShapeError("annotation_set", [(n,) for n in sorted(lengths)],
                             "annotation lengths differ")

    @property
    def n_frames(self) -> int | None:
        if self.user_summaries:
            return len(self.user_summaries[0])
        if self.importance_scores:
            return len(self.importance_scores[0])
        return None

    def mean_importance(self) -> np.ndarray | None:
        if not self.importance_scores:
            return None
        return np.mean(self.importance_scores, axis=0)


def _precision_recall_f1(pred: np.ndarray, user: np.ndarray):
    overlap = int(np.sum((pred > 0) & (user > 0)))
    p_den = int(np.sum(pred > 0))
    r_den = int(np.sum(user > 0))
    precision = overlap / p_den if p_den else 0.0
    recall = overlap / r_den if r_den else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
    return precision, recall, f1


def f1_keyshot(pred_mask: np.ndarray, ann: AnnotationSet, reduce: str = "max"):
    """Keyshot F1 against every user summary, reduced by max or mean.

    Returns (f1, per_user) where per_user is a list of (P, R, F1) triples.
    """
    if reduce not in ("max", "mean"):
        raise SpivgError(f"f1_keyshot: unknown reduction '{reduce}'")
    if not ann.user_summaries:
        raise SpivgError("f1_keyshot: annotation set has no user summaries")
    pred = np.asarray(pred_mask)
    per_user = []
    for u in ann.user_summaries:
        if len(u) != len(pred):
            raise ShapeError("f1_keyshot", [pred.shape, u.shape])
        per_user.append(_precision_recall_f1(pred, u))
    f1s = [t[2] for t in per_user]
    f1 = max(f1s) if reduce == "max" else float(np.mean(f1s))
    return f1, per_user


def qfvs_pr(pred_mask: np.ndarray, ann: AnnotationSet):
    """(precision, recall, F1), each averaged over annotators."""
    _, per_user = f1_keyshot(pred_mask, ann, reduce="mean")
    p = float(np.mean([t[0] for t in per_user]))
    r = float(np.mean([t[1] for t in per_user]))
    f = float(np.mean([t[2] for t in per_user]))
    return p, r, f


def _merge_count(y: np.ndarray) -> int:
    """Number of strictly-decreasing pairs in y (mergesort inversion count,
    ties not counted)."""
    n = len(y)
    if n < 2:
        return 0
    buf = y.copy()
    tmp = np.empty_like(buf)
    inversions = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if buf[j] < buf[i]:
                    inversions += mid - i
                    tmp[k] = buf[j]
                    j += 1
                else:
                    tmp[k] = buf[i]
                    i += 1
                k += 1
            while i < mid:
                tmp[k] = buf[i]
                i += 1
                k += 1
            while j < hi:
                tmp[k] = buf[j]
                j += 1
                k += 1
            buf[lo:hi] = tmp[lo:hi]
        width *= 2
    return inversions


def _tie_pair_count(sorted_keys) -> int:
    total = 0
    run = 1
    for a, b in zip(sorted_keys, sorted_keys[1:]):
        if a == b:
            run += 1
        else:
            total += run * (run - 1) // 2
            run = 1
    total += run * (run - 1) // 2
    return total


def kendall_tau(pred_scores, ref_scores) -> float | None:
    """Tau-b over all frame pairs; None when either side is constant."""
    x = np.asarray(pred_scores, dtype=np.float64)
    y = np.asarray(ref_scores, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError("kendall_tau", [x.shape, y.shape])
    n = x.size
    if n < 2:
        raise SpivgError("kendall_tau: need at least two frames")
    order = np.lexsort((y, x))
    xs, ys = x[order], y[order]
    n0 = n * (n - 1) // 2
    ties_x = _tie_pair_count(xs.tolist())
    ties_y = _tie_pair_count(np.sort(y).tolist())
    ties_xy = _tie_pair_count(list(zip(xs.tolist(), ys.tolist())))
    if ties_x == n0 or ties_y == n0:
        return None
    discordant = _merge_count(ys)
    con_minus_dis = n0 - ties_x - ties_y + ties_xy - 2 * discordant
    return con_minus_dis / math.sqrt((n0 - ties_x) * (n0 - ties_y))


def _midranks(a: np.ndarray) -> np.ndarray:
    order = np.argsort(a, kind="stable")
    ranks = np.empty(len(a))
    sorted_a = a[order]
    i = 0
    while i < len(a):
        j = i
        while j + 1 < len(a) and sorted_a[j + 1] == sorted_a[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman_rho(pred_scores, ref_scores) -> float | None:
    """Pearson correlation of midranks; None when either side is constant."""
    x = np.asarray(pred_scores, dtype=np.float64)
    y = np.asarray(ref_scores, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError("spearman_rho", [x.shape, y.shape])
    if x.size < 2:
        raise SpivgError("spearman_rho: need at least two frames")
    rx = _midranks(x)
    ry = _midranks(y)
    cx = rx - rx.mean()
    cy = ry - ry.mean()
    vx = float(cx @ cx)
    vy = float(cy @ cy)
    if vx == 0.0 or vy == 0.0:
        return None
    return float(cx @ cy) / math.sqrt(vx * vy)
