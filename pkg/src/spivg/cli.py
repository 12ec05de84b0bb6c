"""Command-line interface: synth | train | infer | eval | export-channels.

Handled failures print a single machine-readable JSON object on stderr and
exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import pipeline, store as store_mod
from .config import PipelineConfig, load_config
from .errors import SpivgError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spivg",
                                     description="Spiking-graph video summarization")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic feature store")
    p_synth.add_argument("--out", required=True, help="output store directory")
    p_synth.add_argument("--videos", type=int, default=20)
    p_synth.add_argument("--frames", type=int, default=240)
    p_synth.add_argument("--dim", type=int, default=16)
    p_synth.add_argument("--events", type=int, default=4)
    p_synth.add_argument("--seed", type=int, default=7)
    p_synth.add_argument("--queries", type=int, default=0)
    p_synth.add_argument("--query-dim", type=int, default=8)

    p_train = sub.add_parser("train", help="train a model on one fold")
    p_train.add_argument("--store", required=True)
    p_train.add_argument("--out", required=True, help="checkpoint path")
    p_train.add_argument("--config", default=None)
    p_train.add_argument("--fold", type=int, default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--epochs", type=int, default=None)

    p_infer = sub.add_parser("infer", help="summarize one video")
    p_infer.add_argument("--store", required=True)
    p_infer.add_argument("--checkpoint", required=True)
    p_infer.add_argument("--video", required=True)
    p_infer.add_argument("--query", default=None)
    p_infer.add_argument("--budget", type=float, default=None)
    p_infer.add_argument("--out", default=None, help="write result JSON here")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on its test fold")
    p_eval.add_argument("--store", required=True)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--fold", type=int, default=None)
    p_eval.add_argument("--protocol", choices=["keyshot", "qfvs"], default=None)
    p_eval.add_argument("--out", default=None, help="write report JSON here")

    p_exp = sub.add_parser("export-channels", help="per-frame channel scores as CSV")
    p_exp.add_argument("--store", required=True)
    p_exp.add_argument("--checkpoint", required=True)
    p_exp.add_argument("--out", required=True)
    return parser


def _load_train_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.optimizer.seed = args.seed
    if args.epochs is not None:
        cfg.optimizer.epochs = args.epochs
    if args.fold is not None:
        cfg.split.fold_index = args.fold
    return cfg.validate()


def _run(args) -> int:
    if args.command == "synth":
        st = store_mod.make_synthetic(args.videos, args.frames, args.dim, args.events,
                                      args.seed, n_queries=args.queries,
                                      query_dim=args.query_dim)
        store_mod.save_store(st, args.out)
        print(json.dumps({"status": "ok", "videos": args.videos, "out": args.out}))
        return 0

    if args.command == "train":
        cfg = _load_train_config(args)
        st = store_mod.load_features(args.store)
        ckpt = pipeline.train(cfg, st, fold=args.fold)
        pipeline.save_checkpoint(ckpt, args.out)
        print(json.dumps({
            "status": "ok",
            "fold": ckpt["metadata"]["fold"],
            "epochs": ckpt["metadata"]["epochs"],
            "final_loss": ckpt["metadata"]["loss_history"][-1]
            if ckpt["metadata"]["loss_history"] else None,
            "out": args.out,
        }))
        return 0

    if args.command == "infer":
        st = store_mod.load_features(args.store)
        ckpt = pipeline.load_checkpoint(args.checkpoint)
        res = pipeline.infer(ckpt, st, args.video, query=args.query, budget=args.budget)
        summary = res["summary"]
        doc = {
            "video_id": res["video_id"],
            "query": res["query"],
            "mu": [float(v) for v in res["mu"]],
            "channels": [[float(v) for v in ch] for ch in res["channels"]],
            "variances": res["variances"],
            "boundaries": summary.segmentation.boundaries,
            "shot_scores": summary.shot_scores,
            "selected": [bool(s) for s in summary.selected],
            "frame_mask": [int(v) for v in summary.frame_mask],
        }
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                json.dump(doc, fh)
        print(json.dumps({"status": "ok", "video": args.video,
                          "selected_frames": int(np.sum(summary.frame_mask))}))
        return 0

    if args.command == "eval":
        st = store_mod.load_features(args.store)
        ckpt = pipeline.load_checkpoint(args.checkpoint)
        report = pipeline.evaluate(ckpt, st, fold=args.fold, protocol=args.protocol)
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                json.dump(report, fh, indent=1, sort_keys=True)
        print(pipeline.report_table(report))
        return 0

    if args.command == "export-channels":
        st = store_mod.load_features(args.store)
        ckpt = pipeline.load_checkpoint(args.checkpoint)
        n = pipeline.export_channels(ckpt, st, args.out)
        print(json.dumps({"status": "ok", "rows": n, "out": args.out}))
        return 0

    raise SpivgError(f"unknown command {args.command}")


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _run(args)
    except SpivgError as e:
        print(json.dumps(e.to_json()), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
