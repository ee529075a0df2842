import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import nearest_centroid_predictions
from taillight import store
from taillight.errors import (
    DimMismatch,
    DuplicateClassId,
    InvalidRho,
    ManifestMissing,
    TextNotFound,
    TooManyTasks,
    TruncatedMatrix,
)


def _toy_bundle(dim=4, class_count=3, seed=0):
    counts = [5, 3, 2]
    return store.generate_synthetic_bundle(
        class_count, dim, counts, separation=0.6, noise=0.1, seed=seed, test_count=2
    )


class TestBundleRoundTrip:
    def test_save_load_bitwise(self, tmp_path):
        bundle = _toy_bundle()
        store.save_bundle(bundle, tmp_path)
        loaded = store.load_bundle(tmp_path)
        assert loaded.dim == bundle.dim
        assert loaded.classes == bundle.classes
        for c in bundle.class_ids:
            np.testing.assert_array_equal(loaded.train[c], bundle.train[c])
            np.testing.assert_array_equal(loaded.test[c], bundle.test[c])

    def test_truncated_matrix(self, tmp_path):
        bundle = _toy_bundle()
        store.save_bundle(bundle, tmp_path)
        victim = tmp_path / bundle.classes[0].train_file
        victim.write_bytes(victim.read_bytes()[:-4])
        with pytest.raises(TruncatedMatrix):
            store.load_bundle(tmp_path)

    def test_manifest_missing(self, tmp_path):
        with pytest.raises(ManifestMissing):
            store.load_bundle(tmp_path)

    def test_duplicate_class_id(self, tmp_path):
        bundle = _toy_bundle()
        store.save_bundle(bundle, tmp_path)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        manifest["classes"][1]["id"] = 0
        (tmp_path / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(DuplicateClassId):
            store.load_bundle(tmp_path)

    def test_manifest_count_mismatch_detected(self, tmp_path):
        bundle = _toy_bundle()
        store.save_bundle(bundle, tmp_path)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        manifest["classes"][0]["train_count"] += 1
        (tmp_path / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(TruncatedMatrix):
            store.load_bundle(tmp_path)


class TestTextStore:
    def test_lookup_exact(self):
        ts = store.TextEmbeddingStore(dim=3)
        ts.add("a photo of cat", [1.0, 0.0, 0.0])
        np.testing.assert_array_equal(ts.lookup("a photo of cat"), [1, 0, 0])

    def test_lookup_trims_and_normalizes(self):
        ts = store.TextEmbeddingStore(dim=3)
        ts.add("a photo of cat", [1.0, 0.0, 0.0])
        np.testing.assert_array_equal(ts.lookup("  a photo of cat "), [1, 0, 0])

    def test_unseen_phrase(self):
        ts = store.TextEmbeddingStore(dim=3)
        with pytest.raises(TextNotFound):
            ts.lookup("never embedded")

    def test_dim_mismatch(self):
        ts = store.TextEmbeddingStore(dim=3)
        with pytest.raises(DimMismatch):
            ts.add("x", [1.0, 0.0])

    def test_jsonl_round_trip(self, tmp_path):
        ts = store.TextEmbeddingStore(dim=2)
        ts.add("alpha", [0.25, -0.75])
        ts.add("beta", [1.0, 0.0])
        path = tmp_path / "texts.jsonl"
        ts.save(path)
        loaded = store.TextEmbeddingStore.load(path)
        assert loaded.texts() == ["alpha", "beta"]
        np.testing.assert_array_equal(loaded.lookup("alpha"), [0.25, -0.75])


class TestPseudoTextEncoder:
    def test_deterministic(self):
        a = store.pseudo_text_encoder("bushy tail", 16, seed=5)
        b = store.pseudo_text_encoder("bushy tail", 16, seed=5)
        np.testing.assert_array_equal(a, b)

    def test_unit_norm(self):
        v = store.pseudo_text_encoder("anything", 64, seed=0)
        assert abs(np.linalg.norm(v) - 1.0) < 1e-6

    def test_distinct_texts_nearly_orthogonal(self):
        # Empirical dispersion check: |cos| < 0.5 for all but <0.1% of pairs.
        dim, n = 64, 10_000
        vecs = np.stack(
            [store.pseudo_text_encoder(f"phrase {i}", dim, seed=1) for i in range(200)]
        )
        rng = np.random.default_rng(0)
        idx = rng.integers(0, 200, size=(n, 2))
        keep = idx[:, 0] != idx[:, 1]
        cosines = np.abs(np.sum(vecs[idx[keep, 0]] * vecs[idx[keep, 1]], axis=1))
        assert np.mean(cosines >= 0.5) < 0.001


class TestLongtailCounts:
    def test_formula_endpoints(self):
        assert store.make_longtail_counts(100, 0.01, 3) == [100, 10, 1]

    def test_balanced(self):
        assert store.make_longtail_counts(50, 1.0, 4) == [50, 50, 50, 50]

    def test_single_class(self):
        assert store.make_longtail_counts(7, 0.5, 1) == [7]

    def test_invalid_rho(self):
        with pytest.raises(InvalidRho):
            store.make_longtail_counts(100, 0.0, 3)
        with pytest.raises(InvalidRho):
            store.make_longtail_counts(100, 1.5, 3)

    @given(st.integers(1, 500), st.floats(0.001, 1.0), st.integers(2, 40))
    def test_monotone_nonincreasing_with_exact_endpoints(self, n_max, rho, c):
        counts = store.make_longtail_counts(n_max, rho, c)
        assert counts[0] == n_max
        assert counts[-1] == max(1, round(n_max * rho))
        assert all(a >= b for a, b in zip(counts, counts[1:]))
        assert all(v >= 1 for v in counts)


class TestSyntheticBundle:
    def test_zero_noise_collapses_to_means(self):
        bundle = store.generate_synthetic_bundle(
            3, 8, [2, 2, 2], separation=0.5, noise=0.0, seed=1, test_count=2
        )
        for c in bundle.class_ids:
            rows = bundle.train[c]
            np.testing.assert_array_equal(rows[0], rows[1])
            np.testing.assert_array_equal(bundle.test[c][0], rows[0])

    def test_same_seed_identical(self):
        a = _toy_bundle(seed=9)
        b = _toy_bundle(seed=9)
        for c in a.class_ids:
            np.testing.assert_array_equal(a.train[c], b.train[c])
            np.testing.assert_array_equal(a.test[c], b.test[c])

    def test_nearest_centroid_oracle_gets_everything_right(self):
        bundle = store.generate_synthetic_bundle(
            5, 32, [20] * 5, separation=0.3, noise=0.05, seed=3, test_count=10
        )
        train = {c: bundle.train[c].astype(np.float64) for c in bundle.class_ids}
        samples = np.concatenate([bundle.test[c] for c in bundle.class_ids]).astype(
            np.float64
        )
        truth = np.concatenate([[c] * 10 for c in bundle.class_ids])
        preds = nearest_centroid_predictions(train, samples)
        assert np.array_equal(preds, truth)

    def test_explicit_means_respected(self):
        means = np.eye(4)[:3]
        bundle = store.generate_synthetic_bundle(
            3, 4, [1, 1, 1], separation=1.0, noise=0.0, seed=0, test_count=1, means=means
        )
        for c in bundle.class_ids:
            np.testing.assert_allclose(bundle.train[c][0], means[c], atol=1e-7)


class TestTaskSplit:
    def test_two_tasks_cover_all(self):
        split = store.make_task_split([0, 1, 2, 3], 2, seed=0)
        assert len(split) == 2
        assert split.all_classes() == {0, 1, 2, 3}
        assert len(split[0]) == 2 and len(split[1]) == 2

    def test_single_task(self):
        split = store.make_task_split([0, 1, 2], 1, seed=0)
        assert split[0] == tuple(sorted(split[0])) or set(split[0]) == {0, 1, 2}
        assert split.all_classes() == {0, 1, 2}

    def test_same_seed_identical(self):
        a = store.make_task_split(list(range(10)), 3, seed=4)
        b = store.make_task_split(list(range(10)), 3, seed=4)
        assert a.tasks == b.tasks

    def test_remainder_goes_to_last_task(self):
        split = store.make_task_split(list(range(7)), 3, seed=1)
        assert [len(t) for t in split.tasks] == [2, 2, 3]

    def test_too_many_tasks(self):
        with pytest.raises(TooManyTasks):
            store.make_task_split([0, 1], 3, seed=0)

    @settings(max_examples=30)
    @given(st.integers(1, 30), st.integers(1, 10), st.integers(0, 1000))
    def test_disjoint_and_covering(self, class_count, t, seed):
        if t > class_count:
            return
        split = store.make_task_split(list(range(class_count)), t, seed)
        assert split.all_classes() == set(range(class_count))
        total = sum(len(task) for task in split.tasks)
        assert total == class_count
