import json

import numpy as np
import pytest

from spivg.errors import StoreError
from spivg.metrics import AnnotationSet
from spivg.store import (FeatureStore, VideoRecord, key_shots, load_features,
                         make_synthetic, save_store)


def tiny_store():
    feats = np.arange(6, dtype=np.float32).reshape(3, 2)
    rec = VideoRecord(
        id="a", features=feats,
        annotations=AnnotationSet(user_summaries=[[1, 0, 1]],
                                  importance_scores=[[0.9, 0.1, 0.8]]),
        queries=[{"name": "q0", "vector": np.array([0.5, -1.0])}],
    )
    return FeatureStore(dataset="toy", videos=[rec])


class TestLoadSave:
    def test_minimal_store_loads(self, tmp_path):
        feats = np.array([[1.0], [2.0]], dtype=np.float32)
        st = FeatureStore(dataset="mini", videos=[VideoRecord(id="v", features=feats)])
        save_store(st, tmp_path)
        back = load_features(tmp_path)
        assert back.ids() == ["v"]
        assert back.get("v").n_frames == 2 and back.get("v").dim == 1

    def test_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        videos = [VideoRecord(id=f"v{i}", features=rng.normal(size=(5, 3)).astype(np.float32))
                  for i in range(3)]
        save_store(FeatureStore(dataset="rt", videos=videos), tmp_path)
        back = load_features(tmp_path)
        for v, b in zip(videos, back.videos):
            assert np.array_equal(v.features, b.features)

    def test_annotations_and_queries_round_trip(self, tmp_path):
        save_store(tiny_store(), tmp_path)
        back = load_features(tmp_path)
        rec = back.get("a")
        assert np.array_equal(rec.annotations.user_summaries[0], [1, 0, 1])
        assert np.allclose(rec.annotations.importance_scores[0], [0.9, 0.1, 0.8])
        assert rec.queries[0]["name"] == "q0"
        assert np.allclose(rec.query_named("q0"), [0.5, -1.0])
        with pytest.raises(StoreError, match="unknown query"):
            rec.query_named("nope")

    def test_save_is_idempotent(self, tmp_path):
        st = tiny_store()
        save_store(st, tmp_path / "one")
        save_store(st, tmp_path / "two")
        m1 = (tmp_path / "one" / "manifest.json").read_bytes()
        m2 = (tmp_path / "two" / "manifest.json").read_bytes()
        assert m1 == m2
        assert (tmp_path / "one" / "a.f32").read_bytes() == (tmp_path / "two" / "a.f32").read_bytes()

    def test_truncated_blob_names_video_and_sizes(self, tmp_path):
        save_store(tiny_store(), tmp_path)
        blob = tmp_path / "a.f32"
        blob.write_bytes(blob.read_bytes()[:-4])
        with pytest.raises(StoreError) as exc:
            load_features(tmp_path)
        msg = str(exc.value)
        assert "'a'" in msg and "20" in msg and "24" in msg

    def test_nan_features_rejected(self, tmp_path):
        feats = np.array([[np.nan, 1.0]], dtype=np.float32)
        st = FeatureStore(dataset="bad", videos=[VideoRecord(id="n", features=feats)])
        save_store(st, tmp_path)
        with pytest.raises(StoreError, match="non-finite"):
            load_features(tmp_path)

    def test_missing_blob(self, tmp_path):
        save_store(tiny_store(), tmp_path)
        (tmp_path / "a.f32").unlink()
        with pytest.raises(StoreError, match="missing blob"):
            load_features(tmp_path)

    def test_annotation_length_mismatch(self, tmp_path):
        save_store(tiny_store(), tmp_path)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        manifest["videos"][0]["annotations"]["user_summaries"] = [[1, 0]]
        (tmp_path / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(StoreError, match="annotation length"):
            load_features(tmp_path)

    def test_duplicate_ids_rejected(self):
        feats = np.zeros((2, 1), dtype=np.float32)
        with pytest.raises(StoreError, match="duplicate"):
            FeatureStore(dataset="d", videos=[VideoRecord(id="x", features=feats),
                                              VideoRecord(id="x", features=feats)])


class TestSynthetic:
    def test_deterministic(self):
        a = make_synthetic(3, 80, 6, 2, seed=5)
        b = make_synthetic(3, 80, 6, 2, seed=5)
        for va, vb in zip(a.videos, b.videos):
            assert np.array_equal(va.features, vb.features)
            assert all(np.array_equal(x, y) for x, y in
                       zip(va.annotations.user_summaries, vb.annotations.user_summaries))

    def test_no_events_means_empty_annotations(self):
        st = make_synthetic(2, 60, 4, 0, seed=1)
        for v in st.videos:
            assert all(u.sum() == 0 for u in v.annotations.user_summaries)
            assert np.allclose(v.annotations.mean_importance(), 0.0)

    def test_largest_diffs_sit_on_planted_boundaries(self):
        st = make_synthetic(4, 240, 16, 4, seed=7)
        for rec in st.videos:
            diffs = np.linalg.norm(np.diff(rec.features.astype(np.float64), axis=0), axis=1)
            top = np.argsort(diffs)[-4:] + 1  # boundary position = diff index + 1
            # planted boundaries: wherever the latent changes -> big jumps
            planted = set(np.flatnonzero(diffs > 1.0) + 1)
            assert set(top) <= planted

    def test_key_shots_total_near_budget(self):
        st = make_synthetic(3, 240, 16, 4, seed=7)
        for rec in st.videos:
            total = sum(b - a for a, b in key_shots(rec))
            assert 0.10 * 240 <= total <= 0.15 * 240

    def test_users_cover_only_key_frames(self):
        st = make_synthetic(5, 240, 16, 4, seed=7)
        for rec in st.videos:
            keys = np.zeros(240, dtype=bool)
            for a, b in key_shots(rec):
                keys[a:b] = True
            for u in rec.annotations.user_summaries:
                assert not np.any(np.asarray(u, dtype=bool) & ~keys)

    def test_infeasible_packing_rejected(self):
        with pytest.raises(StoreError, match="infeasible"):
            make_synthetic(1, 30, 4, 10, seed=0)

    def test_queries_attached(self):
        st = make_synthetic(2, 80, 6, 2, seed=9, n_queries=2, query_dim=5)
        assert st.text_dim == 5
        for v in st.videos:
            assert [q["name"] for q in v.queries] == ["q0", "q1"]
