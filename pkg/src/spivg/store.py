"""On-disk feature store and the synthetic dataset generator.

A store is a directory holding `manifest.json` plus one raw blob per video:
little-endian float32 values, row-major frames x dim, exactly 4*T*d bytes.
Annotations (binary user summaries, real importance scores) and optional
query vectors live in the manifest. Loading validates everything eagerly and
names the offending video in every error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import StoreError
from .metrics import AnnotationSet

MANIFEST_NAME = "manifest.json"
STORE_FORMAT_VERSION = 1


@dataclass
class VideoRecord:
    id: str
    features: np.ndarray  # (T, d) float32
    annotations: AnnotationSet = field(default_factory=AnnotationSet)
    queries: list = field(default_factory=list)  # [{"name": str, "vector": np.ndarray}]

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def query_named(self, name: str) -> np.ndarray:
        for q in self.queries:
            if q["name"] == name:
                return q["vector"]
        raise StoreError(f"unknown query '{name}'", video_id=self.id)


@dataclass
class FeatureStore:
    dataset: str
    videos: list

    def __post_init__(self):
        self._by_id = {v.id: v for v in self.videos}
        if len(self._by_id) != len(self.videos):
            raise StoreError("duplicate video ids in store")

    def ids(self) -> list[str]:
        return [v.id for v in self.videos]

    def get(self, video_id: str) -> VideoRecord:
        if video_id not in self._by_id:
            raise StoreError("not in store", video_id=video_id)
        return self._by_id[video_id]

    @property
    def dim(self) -> int:
        return self.videos[0].dim

    @property
    def text_dim(self) -> int | None:
        for v in self.videos:
            if v.queries:
                return len(v.queries[0]["vector"])
        return None


def save_store(store: FeatureStore, out_dir) -> None:
    """Write manifest + blobs. Deterministic bytes for identical content."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"format_version": STORE_FORMAT_VERSION, "dataset": store.dataset, "videos": []}
    for v in store.videos:
        feats = np.ascontiguousarray(v.features, dtype="<f4")
        blob_name = f"{v.id}.f32"
        (out / blob_name).write_bytes(feats.tobytes())
        entry = {
            "id": v.id,
            "n_frames": int(v.n_frames),
            "dim": int(v.dim),
            "blob": blob_name,
        }
        ann = {}
        if v.annotations.user_summaries is not None:
            ann["user_summaries"] = [[int(x) for x in u] for u in v.annotations.user_summaries]
        if v.annotations.importance_scores is not None:
            ann["importance_scores"] = [[float(x) for x in s]
                                        for s in v.annotations.importance_scores]
        if ann:
            entry["annotations"] = ann
        if v.queries:
            entry["queries"] = [{"name": q["name"], "vector": [float(x) for x in q["vector"]]}
                                for q in v.queries]
        manifest["videos"].append(entry)
    (out / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_features(path) -> FeatureStore:
    """Load and eagerly validate a feature-store directory."""
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise StoreError(f"no {MANIFEST_NAME} in {root}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise StoreError(f"manifest is not valid JSON: {e}") from None
    if manifest.get("format_version") != STORE_FORMAT_VERSION:
        raise StoreError(f"unsupported store format_version {manifest.get('format_version')!r}")
    videos = []
    text_dim = None
    for entry in manifest.get("videos", []):
        vid = entry.get("id")
        if not vid:
            raise StoreError("manifest entry without id")
        t, d = int(entry["n_frames"]), int(entry["dim"])
        if t < 1 or d < 1:
            raise StoreError(f"bad dimensions T={t} d={d}", video_id=vid)
        blob_path = root / entry["blob"]
        if not blob_path.is_file():
            raise StoreError(f"missing blob {entry['blob']}", video_id=vid)
        raw = blob_path.read_bytes()
        expected = 4 * t * d
        if len(raw) != expected:
            raise StoreError(
                f"blob has {len(raw)} bytes, expected {expected} (T={t}, d={d})",
                video_id=vid,
            )
        feats = np.frombuffer(raw, dtype="<f4").reshape(t, d)
        if not np.all(np.isfinite(feats)):
            raise StoreError("non-finite feature values", video_id=vid)
        ann_entry = entry.get("annotations", {})
        try:
            ann = AnnotationSet(
                user_summaries=ann_entry.get("user_summaries"),
                importance_scores=ann_entry.get("importance_scores"),
            )
        except Exception as e:
            raise StoreError(f"bad annotations: {e}", video_id=vid) from None
        if ann.n_frames is not None and ann.n_frames != t:
            raise StoreError(
                f"annotation length {ann.n_frames} != n_frames {t}", video_id=vid
            )
        queries = []
        for q in entry.get("queries", []):
            vec = np.asarray(q["vector"], dtype=np.float64)
            if text_dim is None:
                text_dim = vec.size
            elif vec.size != text_dim:
                raise StoreError(
                    f"query dim {vec.size} differs from {text_dim}", video_id=vid
                )
            queries.append({"name": q["name"], "vector": vec})
        videos.append(VideoRecord(id=vid, features=feats, annotations=ann, queries=queries))
    if not videos:
        raise StoreError("store has no videos")
    dims = {v.dim for v in videos}
    if len(dims) > 1:
        raise StoreError(f"videos disagree on feature dim: {sorted(dims)}")
    return FeatureStore(dataset=manifest.get("dataset", "unknown"), videos=videos)


def make_synthetic(n_videos: int, n_frames: int, dim: int, n_events: int, seed: int,
                   n_queries: int = 0, query_dim: int = 8, noise: float = 0.05,
                   min_seg_len: int = 6, n_users: int = 3,
                   agreement: float = 0.9) -> FeatureStore:
    """Piecewise-constant videos with planted key segments.

    Each video is one long background block followed by a rotated run of
    short "special" segments: n_events key segments (large shared offset
    along one dataset-level direction) interleaved with distractor segments
    (comparable offsets along per-segment random directions). Distractors
    keep the selection problem honest: key shots are not the only short
    shots, so a random scorer cannot land on them by shot-size alone, while
    offsets are large enough that segmentation recovers every planted
    boundary at the default penalty. Users cover each key shot independently
    with probability `agreement`; importance is the lightly smoothed key
    indicator. Deterministic for a given seed.
    """
    if n_videos < 1 or n_frames < 2 or dim < 1 or n_events < 0:
        raise StoreError("make_synthetic: bad size arguments")
    rng = np.random.default_rng(seed)
    key_dir = rng.normal(size=dim)
    key_dir /= np.linalg.norm(key_dir)
    # offsets sized so isolating one special segment pays for a KTS boundary
    # at the default penalty (dim * log T) on desk-scale videos
    key_amp = 6.0
    distractor_amp = 4.5
    bg_spread = 0.15

    if n_events > 0:
        key_len = max(2, int(0.15 * n_frames / n_events))
        distractor_len = max(2, key_len - 1)
        slots = max(1, n_frames // 20)  # mirrors the default kts_max_segments
        n_distractors = max(3, n_events, slots - 1 - n_events)
        special_frames = n_events * key_len + n_distractors * distractor_len
        if special_frames + min_seg_len > n_frames:
            raise StoreError(
                f"make_synthetic: infeasible event packing "
                f"({special_frames + min_seg_len} > {n_frames} frames)")
        # keys spaced out among distractors so no two key segments touch
        template = []
        for _ in range(n_events):
            template.append("key")
            template.append("distractor")
        template.extend("distractor" for _ in range(n_distractors - n_events))
    else:
        key_len = distractor_len = 0
        template = []

    videos = []
    for v in range(n_videos):
        if n_events > 0:
            special = template[:]
            shift = int(rng.integers(0, len(special)))
            special = special[shift:] + special[:shift]
            bg_len = n_frames - n_events * key_len \
                - (len(special) - n_events) * distractor_len
            segments = [(bg_len, "bg")]
            segments += [(key_len if kind == "key" else distractor_len, kind)
                         for kind in special]
        else:
            thirds = [n_frames // 3, n_frames // 3, n_frames - 2 * (n_frames // 3)]
            segments = [(ln, "bg") for ln in thirds if ln > 0]

        frames = []
        key_mask = []
        for length, kind in segments:
            latent = rng.normal(scale=bg_spread, size=dim)
            if kind == "key":
                latent = latent + key_amp * key_dir
            elif kind == "distractor":
                direction = rng.normal(size=dim)
                direction /= np.linalg.norm(direction)
                latent = latent + distractor_amp * direction
            frames.append(latent + rng.normal(scale=noise, size=(length, dim)))
            key_mask.extend([1 if kind == "key" else 0] * length)
        feats = np.vstack(frames).astype(np.float32)
        key_mask = np.array(key_mask)

        starts = np.cumsum([0] + [s[0] for s in segments])[:-1]
        planted = [(int(a), int(a + length), kind)
                   for a, (length, kind) in zip(starts, segments)]
        key_segs = [(a, b) for a, b, kind in planted if kind == "key"]
        users = []
        for _ in range(n_users):
            mask = np.zeros(n_frames, dtype=np.int64)
            for a, b in key_segs:
                if rng.random() < agreement:
                    mask[a:b] = 1
            users.append(mask)
        importance = np.convolve(key_mask.astype(np.float64), [0.25, 0.5, 0.25], mode="same")

        queries = [{"name": f"q{j}", "vector": rng.normal(size=query_dim)}
                   for j in range(n_queries)]
        videos.append(VideoRecord(
            id=f"vid{v:03d}",
            features=feats,
            annotations=AnnotationSet(user_summaries=users,
                                      importance_scores=[importance]),
            queries=queries,
        ))
    return FeatureStore(dataset="synthetic", videos=videos)


def key_shots(record: VideoRecord) -> list[tuple[int, int]]:
    """Planted key segments of a synthetic video, recovered from the stored
    importance scores (interior key frames carry smoothed importance 1.0,
    background frames at most 0.25)."""
    imp = record.annotations.mean_importance()
    if imp is None:
        return []
    mask = imp > 0.5
    shots = []
    start = None
    for t, on in enumerate(mask):
        if on and start is None:
            start = t
        elif not on and start is not None:
            shots.append((start, t))
            start = None
    if start is not None:
        shots.append((start, len(mask)))
    return shots
