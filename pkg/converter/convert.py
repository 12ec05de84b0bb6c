#!/usr/bin/env python3
"""Convert community HDF5 keyshot archives (SumMe/TVSum layout) into a
feature-store directory.

Source layout: one HDF5 group per video carrying `features` (T x d),
optionally `user_summary` (n_users x T), `gtscore` (T,) and `change_points`.
Output layout (the summarizer's store interface): `manifest.json` plus one
`<id>.f32` blob per video holding little-endian float32 features, row-major
frames x dim. Re-running a conversion produces byte-identical output.

Usage: convert.py --in data.h5 --out store/ [--fields features,user_summary,gtscore]
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import h5py
import numpy as np

DEFAULT_FIELDS = ("features", "user_summary", "gtscore", "change_points")
STORE_FORMAT_VERSION = 1


class ConversionError(Exception):
    pass


@dataclass
class ConversionReport:
    videos: list = field(default_factory=list)  # {"id", "n_frames", "dim", "n_users"}
    warnings: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"videos": self.videos, "warnings": self.warnings}


def _as_float32(name: str, vid: str, data: np.ndarray, report: ConversionReport) -> np.ndarray:
    arr = np.asarray(data)
    if not np.issubdtype(arr.dtype, np.number):
        raise ConversionError(f"video '{vid}': dataset '{name}' is not numeric")
    if not np.all(np.isfinite(arr)):
        raise ConversionError(f"video '{vid}': dataset '{name}' contains non-finite values")
    if arr.dtype != np.float32:
        report.warnings.append(f"{vid}: '{name}' cast from {arr.dtype} to float32")
    return arr.astype("<f4")


def convert(h5_path, out_dir, include=DEFAULT_FIELDS) -> ConversionReport:
    """Write manifest + blobs for every video group in the archive."""
    include = tuple(include)
    if "features" not in include:
        raise ConversionError("'features' must be among the selected fields")
    report = ConversionReport()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"format_version": STORE_FORMAT_VERSION, "dataset": Path(h5_path).stem,
                "videos": []}
    try:
        archive = h5py.File(h5_path, "r")
    except OSError as e:
        raise ConversionError(f"cannot open '{h5_path}': {e}") from None
    with archive:
        for vid in sorted(archive.keys()):
            group = archive[vid]
            if "features" not in group:
                raise ConversionError(
                    f"video '{vid}': no 'features' dataset; available: {sorted(group.keys())}")
            feats = _as_float32("features", vid, group["features"][()], report)
            if feats.ndim != 2:
                raise ConversionError(
                    f"video '{vid}': features must be 2-D, got shape {feats.shape}")
            t, d = feats.shape
            blob_name = f"{vid}.f32"
            (out / blob_name).write_bytes(np.ascontiguousarray(feats).tobytes())
            entry = {"id": vid, "n_frames": int(t), "dim": int(d), "blob": blob_name}

            n_users = 0
            annotations = {}
            if "user_summary" in include:
                if "user_summary" in group:
                    summary = np.asarray(group["user_summary"][()])
                    if summary.ndim == 1:
                        summary = summary[None, :]
                    if summary.shape[1] != t:
                        raise ConversionError(
                            f"video '{vid}': user_summary length {summary.shape[1]} != {t}")
                    annotations["user_summaries"] = (summary > 0).astype(int).tolist()
                    n_users = summary.shape[0]
                else:
                    report.warnings.append(f"{vid}: no user_summary; annotations omitted")
            if "gtscore" in include and "gtscore" in group:
                score = np.asarray(group["gtscore"][()], dtype=np.float64).reshape(-1)
                if score.shape[0] != t:
                    raise ConversionError(
                        f"video '{vid}': gtscore length {score.shape[0]} != {t}")
                annotations["importance_scores"] = [score.tolist()]
            if annotations:
                entry["annotations"] = annotations

            if "queries" in group and isinstance(group["queries"], h5py.Group):
                entry["queries"] = [
                    {"name": qname,
                     "vector": np.asarray(group["queries"][qname][()],
                                          dtype=np.float64).reshape(-1).tolist()}
                    for qname in sorted(group["queries"].keys())
                ]

            if "change_points" in include and "change_points" in group:
                report.warnings.append(
                    f"{vid}: change_points present but the store derives shots itself; dropped")
            handled = {"features", "user_summary", "gtscore", "change_points", "queries"}
            for extra in sorted(set(group.keys()) - handled):
                report.warnings.append(f"{vid}: unknown dataset '{extra}' dropped")

            manifest["videos"].append(entry)
            report.videos.append({"id": vid, "n_frames": int(t), "dim": int(d),
                                  "n_users": n_users})
    if not manifest["videos"]:
        raise ConversionError("archive has no video groups")
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    _validate_with_loader(out, report)
    return report


def _validate_with_loader(out_dir, report: ConversionReport):
    """Round-trip check through the summarizer's own loader, when installed."""
    try:
        from spivg.store import load_features
    except ImportError:
        report.warnings.append("spivg not installed; skipped loader validation")
        return
    load_features(out_dir)  # raises on any schema violation


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--in", dest="src", required=True, help="source HDF5 archive")
    parser.add_argument("--out", dest="out", required=True, help="output store directory")
    parser.add_argument("--fields", default=",".join(DEFAULT_FIELDS),
                        help="comma-separated field selectors")
    args = parser.parse_args(argv)
    try:
        report = convert(args.src, args.out, tuple(f for f in args.fields.split(",") if f))
    except ConversionError as e:
        print(json.dumps({"error": "ConversionError", "message": str(e)}), file=sys.stderr)
        return 1
    print(json.dumps(report.to_json(), indent=1))
    return 0


if __name__ == "__main__":
    sys.exit(main())
