"""Orchestration: k-fold splits, the training loop, inference, evaluation,
checkpoint I/O and the channel CSV export.

Everything is deterministic given (config, store, seed): parameter init,
video order, dropout streams and fold assignment all derive from the config
seed through named SeedSequence children, and checkpoints are written as
canonical JSON so identical runs produce identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import metrics, summarize
from .config import PipelineConfig, resolve_epochs, resolve_folds
from .errors import PipelineError, SpivgError, TrainingDiverged
from .gradtape import AdamWState, Tape, adamw_step, zero_grads
from .model import SpivgModel
from .store import FeatureStore, VideoRecord

CHECKPOINT_FORMAT_VERSION = 1


# -- folds ---------------------------------------------------------------------


def fold_split(ids, n_folds: int, seed: int) -> list[list[str]]:
    """Deterministic partition of video ids into n_folds test folds."""
    ids_sorted = sorted(ids)
    if n_folds < 2:
        raise PipelineError("fold_split: need at least 2 folds")
    if n_folds > len(ids_sorted):
        raise PipelineError(
            f"fold_split: {n_folds} folds but only {len(ids_sorted)} videos")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF07D]))
    perm = rng.permutation(len(ids_sorted))
    shuffled = [ids_sorted[i] for i in perm]
    return [[str(v) for v in chunk] for chunk in np.array_split(shuffled, n_folds)]


def _bce_target(record: VideoRecord) -> np.ndarray:
    if not record.annotations.user_summaries:
        raise PipelineError(
            f"video '{record.id}' has no user summaries; training needs binary annotations")
    return np.mean([np.asarray(u, dtype=np.float64)
                    for u in record.annotations.user_summaries], axis=0)


# -- training --------------------------------------------------------------------


def train(cfg: PipelineConfig, store: FeatureStore, fold: int | None = None) -> dict:
    """Train on all videos outside the test fold; returns a checkpoint dict."""
    cfg.validate()
    seed = cfg.optimizer.seed
    if fold is None:
        fold = cfg.split.fold_index
    n_folds = resolve_folds(cfg, store.dataset)
    folds = fold_split(store.ids(), n_folds, seed)
    if not 0 <= fold < n_folds:
        raise PipelineError(f"fold {fold} outside [0, {n_folds})")
    test_ids = set(folds[fold])
    train_ids = [v for v in sorted(store.ids()) if v not in test_ids]
    if not train_ids:
        raise PipelineError("empty training split")

    epochs = resolve_epochs(cfg, store.dataset)
    model = SpivgModel(cfg, store.dim, store.text_dim,
                       rng=np.random.default_rng(np.random.SeedSequence([seed, 1])))
    params = model.parameters()
    opt = AdamWState(lr=cfg.optimizer.lr, beta1=cfg.optimizer.betas[0],
                     beta2=cfg.optimizer.betas[1], eps=cfg.optimizer.eps,
                     weight_decay=cfg.optimizer.weight_decay)
    drop_rng = np.random.default_rng(np.random.SeedSequence([seed, 2, fold]))
    order_rng = np.random.default_rng(np.random.SeedSequence([seed, 3, fold]))

    def step(n_accumulated: int):
        for p in params.values():
            p.grad /= n_accumulated
        adamw_step(opt, params)
        model.clamp_constraints()
        zero_grads(params)

    loss_history = []
    for epoch in range(epochs):
        order = [train_ids[i] for i in order_rng.permutation(len(train_ids))]
        epoch_losses = []
        pending = 0
        zero_grads(params)
        for vid in order:
            rec = store.get(vid)
            tape = Tape()
            out = model.forward(tape, rec.features,
                                queries=[q["vector"] for q in rec.queries],
                                training=True, rng=drop_rng)
            loss = tape.bce_loss(out["mu"], _bce_target(rec))
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, vid)
            tape.backward(loss)
            epoch_losses.append(value)
            pending += 1
            if pending == cfg.optimizer.batch_videos:
                step(pending)
                pending = 0
        if pending:
            step(pending)
        loss_history.append(float(np.mean(epoch_losses)))

    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": cfg.to_dict(),
        "metadata": {
            "dataset": store.dataset,
            "dim": store.dim,
            "text_dim": store.text_dim,
            "fold": fold,
            "n_folds": n_folds,
            "seed": seed,
            "epochs": epochs,
            "loss_history": loss_history,
        },
        "params": model.params_doc(),
    }


def model_from_checkpoint(checkpoint: dict) -> SpivgModel:
    if checkpoint.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise SpivgError(
            f"unsupported checkpoint format_version {checkpoint.get('format_version')!r}")
    cfg = PipelineConfig.from_dict(checkpoint["config"])
    meta = checkpoint["metadata"]
    model = SpivgModel(cfg, int(meta["dim"]),
                       meta["text_dim"] if meta.get("text_dim") else None)
    model.load_params_doc(checkpoint["params"])
    return model


def save_checkpoint(checkpoint: dict, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(checkpoint))


def checkpoint_bytes(checkpoint: dict) -> bytes:
    return (json.dumps(checkpoint, sort_keys=True, separators=(",", ":")) + "\n").encode()


def load_checkpoint(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise SpivgError(f"cannot read checkpoint: {e}") from None


# -- inference --------------------------------------------------------------------


def infer(checkpoint: dict, store: FeatureStore, video_id: str,
          query: str | None = None, budget: float | None = None,
          _model: SpivgModel | None = None) -> dict:
    """Full forward pass plus assembled summary for one video. Read-only."""
    model = _model if _model is not None else model_from_checkpoint(checkpoint)
    cfg = model.cfg
    rec = store.get(video_id)
    if rec.dim != model.dim:
        raise SpivgError(
            f"video '{video_id}' has dim {rec.dim}, checkpoint expects {model.dim}")
    if query is not None:
        queries = [rec.query_named(query)]
    else:
        queries = [q["vector"] for q in rec.queries]
    out = model.infer_forward(rec.features, queries)
    budget_fraction = cfg.summary.budget_fraction if budget is None else budget
    result = summarize.assemble_summary(
        rec.features.astype(np.float64), out["mu"], budget_fraction,
        max_segments=cfg.summary.kts_max_segments,
        penalty=cfg.summary.kts_penalty)
    return {
        "video_id": video_id,
        "query": query,
        "mu": out["mu"],
        "channels": out["channels"],
        "variances": out["variances"],
        "summary": result,
    }


# -- evaluation --------------------------------------------------------------------


def _eval_video(model, checkpoint, store, vid, protocol):
    rec = store.get(vid)
    inf = infer(checkpoint, store, vid, _model=model)
    mask = inf["summary"].frame_mask
    row: dict = {"n_frames": rec.n_frames}
    if rec.annotations.user_summaries:
        f1_max, _ = metrics.f1_keyshot(mask, rec.annotations, "max")
        f1_mean, _ = metrics.f1_keyshot(mask, rec.annotations, "mean")
        row["f1_max"] = f1_max
        row["f1_mean"] = f1_mean
    ref = rec.annotations.mean_importance()
    if ref is not None:
        row["tau"] = metrics.kendall_tau(inf["mu"], ref)
        row["rho"] = metrics.spearman_rho(inf["mu"], ref)
    wants_qfvs = protocol == "qfvs" or (protocol is None and rec.queries)
    if wants_qfvs and rec.annotations.user_summaries:
        p, r, f = metrics.qfvs_pr(mask, rec.annotations)
        row["qfvs"] = {"precision": p, "recall": r, "f1": f}
    return vid, row


def evaluate(checkpoint: dict, store: FeatureStore, fold: int | None = None,
             protocol: str | None = None) -> dict:
    """Metrics over the held-out fold. SPIVG_THREADS caps the fan-out.

    protocol: None auto-detects (the precision/recall/F1 triple is added for
    videos carrying queries); "qfvs" forces the triple, "keyshot" omits it.
    """
    if protocol not in (None, "qfvs", "keyshot"):
        raise PipelineError(f"unknown evaluation protocol '{protocol}'")
    meta = checkpoint["metadata"]
    cfg = PipelineConfig.from_dict(checkpoint["config"])
    if fold is None:
        fold = int(meta["fold"])
    n_folds = int(meta["n_folds"])
    if not 0 <= fold < n_folds:
        raise PipelineError(f"fold {fold} outside [0, {n_folds})")
    folds = fold_split(store.ids(), n_folds, int(meta["seed"]))
    test_ids = folds[fold]
    if not test_ids:
        raise PipelineError(f"test fold {fold} is empty")
    model = model_from_checkpoint(checkpoint)
    threads = int(os.environ.get("SPIVG_THREADS", "1") or "1")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(
                lambda v: _eval_video(model, checkpoint, store, v, protocol), test_ids))
    else:
        rows = [_eval_video(model, checkpoint, store, v, protocol) for v in test_ids]
    videos = dict(rows)

    def agg(key):
        vals = [r[key] for r in videos.values() if r.get(key) is not None]
        return float(np.mean(vals)) if vals else None

    report = {
        "dataset": store.dataset,
        "fold": fold,
        "n_folds": n_folds,
        "video_ids": test_ids,
        "videos": videos,
        "aggregate": {
            "f1_max": agg("f1_max"),
            "f1_mean": agg("f1_mean"),
            "tau": agg("tau"),
            "rho": agg("rho"),
            "tau_undefined": sum(1 for r in videos.values()
                                 if "tau" in r and r["tau"] is None),
        },
    }
    if any("qfvs" in r for r in videos.values()):
        for key in ("precision", "recall", "f1"):
            vals = [r["qfvs"][key] for r in videos.values() if "qfvs" in r]
            report["aggregate"][f"qfvs_{key}"] = float(np.mean(vals))
    return report


def report_table(report: dict) -> str:
    """Aligned-column text rendering of an evaluation report."""
    headers = ["video", "f1_max", "f1_mean", "tau", "rho"]
    rows = [headers]

    def fmt(v):
        if v is None:
            return "undef"
        return f"{v:.4f}"

    for vid, r in report["videos"].items():
        rows.append([vid, fmt(r.get("f1_max")), fmt(r.get("f1_mean")),
                     fmt(r.get("tau")), fmt(r.get("rho"))])
    a = report["aggregate"]
    rows.append(["MEAN", fmt(a["f1_max"]), fmt(a["f1_mean"]), fmt(a["tau"]), fmt(a["rho"])])
    widths = [max(len(r[i]) for r in rows) for i in range(len(headers))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


# -- export -----------------------------------------------------------------------


def export_channels(checkpoint: dict, store: FeatureStore, out_path) -> int:
    """One CSV row per (video, frame): the four channel scores, their plain
    mean and the fused posterior. Returns the number of data rows."""
    model = model_from_checkpoint(checkpoint)
    n_rows = 0
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video", "frame", "ch_0", "ch_1", "ch_2", "ch_3", "av", "vi"])
        for vid in store.ids():
            rec = store.get(vid)
            out = model.infer_forward(rec.features, [q["vector"] for q in rec.queries])
            chans = out["channels"]
            mu = out["mu"]
            for t in range(rec.n_frames):
                vals = [chans[c][t] for c in range(len(chans))]
                writer.writerow([vid, t] + [repr(float(v)) for v in vals]
                                + [repr(float(np.mean(vals))), repr(float(mu[t]))])
                n_rows += 1
    return n_rows
