"""k-NN exactness, Lloyd behaviour, semantic-id assignment, event enrichment."""

import numpy as np
import pytest

from coffee.enrichment import (
    Codebook,
    KnnIndex,
    assign_semantic_id,
    assign_semantic_ids,
    enrich_event,
    knn_query,
    load_codebook,
    load_index,
    neighbor_mean,
    save_codebook,
    save_index,
    train_codebook,
)
from coffee.errors import AttributeBudgetError, ConfigError, OutOfRangeError
from coffee.events import (
    Event,
    SourceType,
    build_schemas,
    cat_attr,
    validate_event,
)
from tests.test_events import SIZES, make_ad_event


def exhaustive_knn(index, query, k):
    d = np.sum((index.embeddings - query) ** 2, axis=1)
    order = sorted(range(len(index)), key=lambda i: (d[i], index.ids[i]))
    return [int(index.ids[i]) for i in order[:k]]


class TestKnnQuery:
    def test_exact_match_comes_first(self):
        rng = np.random.default_rng(0)
        emb = rng.normal(size=(20, 4))
        index = KnnIndex(ids=np.arange(20), embeddings=emb)
        assert knn_query(index, emb[7], 1)[0] == 7

    def test_k_equals_m(self):
        rng = np.random.default_rng(1)
        emb = rng.normal(size=(9, 3))
        index = KnnIndex(ids=np.arange(9), embeddings=emb)
        got = list(knn_query(index, rng.normal(size=3), 9))
        assert sorted(got) == list(range(9))

    def test_planted_2d_points(self):
        pts = np.array([[0.0, 1.0], [2.0, 0.0], [0.5, 0.5], [3.0, 3.0], [0.1, 0.0]])
        index = KnnIndex(ids=np.arange(5), embeddings=pts)
        got = list(knn_query(index, np.zeros(2), 2))
        assert got == exhaustive_knn(index, np.zeros(2), 2) == [4, 2]

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            m = int(rng.integers(2, 1000))
            emb = rng.normal(size=(m, 6)).round(1)  # rounding forces ties
            index = KnnIndex(ids=np.arange(m), embeddings=emb)
            k = int(rng.integers(1, min(m, 12) + 1))
            q = rng.normal(size=6).round(1)
            assert list(knn_query(index, q, k)) == exhaustive_knn(index, q, k)

    def test_distance_ties_break_by_id(self):
        emb = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        index = KnnIndex(ids=np.array([5, 1, 3]), embeddings=emb)
        assert list(knn_query(index, np.array([1.0, 0.0]), 2)) == [3, 5]

    def test_k_out_of_range(self):
        index = KnnIndex(ids=np.arange(3), embeddings=np.eye(3))
        with pytest.raises(OutOfRangeError):
            knn_query(index, np.zeros(3), 4)


class TestTrainCodebook:
    def test_wcss_zero_when_size_equals_distinct(self):
        rng = np.random.default_rng(3)
        emb = rng.normal(size=(6, 2))
        cb = train_codebook(emb, size=6, iterations=3, seed=0)
        assert cb.wcss_history[-1] == pytest.approx(0.0, abs=1e-20)

    def test_one_lloyd_step_on_planted_points(self):
        pts = np.array([[0.0], [1.0], [10.0], [11.0]])
        cb = train_codebook(pts, size=2, iterations=1, seed=1)
        assert sorted(cb.centroids.reshape(-1)) == pytest.approx([0.5, 10.5])

    def test_wcss_monotone_non_increasing(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            emb = rng.normal(size=(120, 5))
            cb = train_codebook(emb, size=8, iterations=20, seed=seed)
            diffs = np.diff(cb.wcss_history)
            assert np.all(diffs <= 1e-9)

    def test_size_above_distinct_rejected(self):
        emb = np.zeros((5, 2))
        with pytest.raises(ConfigError):
            train_codebook(emb, size=2, iterations=1, seed=0)

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        emb = rng.normal(size=(50, 3))
        a = train_codebook(emb, size=4, iterations=10, seed=9)
        b = train_codebook(emb, size=4, iterations=10, seed=9)
        np.testing.assert_array_equal(a.centroids, b.centroids)


class TestAssignSemanticId:
    def test_exact_centroid(self):
        cb = Codebook(centroids=np.eye(5))
        assert assign_semantic_id(cb, np.eye(5)[3]) == 3

    def test_tie_goes_to_lowest_index(self):
        cb = Codebook(centroids=np.array([[5.0], [0.0], [2.0], [4.0]]))
        # 3.0 is equidistant to centroids at 2.0 (index 2) and 4.0 (index 3)
        assert assign_semantic_id(cb, np.array([3.0])) == 2

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(5)
        cb = Codebook(centroids=rng.normal(size=(16, 4)))
        for _ in range(100):
            e = rng.normal(size=4)
            d = np.sum((cb.centroids - e) ** 2, axis=1)
            assert assign_semantic_id(cb, e) == int(np.argmin(d))

    def test_assignment_consistency_after_training(self):
        rng = np.random.default_rng(6)
        emb = rng.normal(size=(80, 3))
        cb = train_codebook(emb, size=6, iterations=15, seed=2)
        ids = assign_semantic_ids(cb, emb)
        for i in range(80):
            d = np.sum((cb.centroids - emb[i]) ** 2, axis=1)
            assert ids[i] == int(np.argmin(d))


class TestEnrichEvent:
    def setup_method(self):
        rng = np.random.default_rng(7)
        self.emb = rng.normal(size=(SIZES.ads, SIZES.embedding_dim))
        self.index = KnnIndex(ids=np.arange(SIZES.ads), embeddings=self.emb)
        self.codebook = train_codebook(self.emb, size=4, iterations=5, seed=0)
        self.schemas = build_schemas(SIZES)

    def test_k1_returns_own_embedding(self):
        event = make_ad_event(ad=7)
        out = enrich_event(event, self.index, self.codebook, k=1)
        np.testing.assert_allclose(out.attribute("knn_embedding").dense, self.emb[7])

    def test_adds_exactly_one_attribute(self):
        event = make_ad_event()
        out = enrich_event(event, self.index, self.codebook, k=3)
        assert len(out.attributes) == len(event.attributes) + 1

    def test_neighbor_mean_semantics(self):
        event = make_ad_event(ad=2)
        out = enrich_event(event, self.index, None, k=5)
        expect = neighbor_mean(self.index, self.emb[2], 5)
        np.testing.assert_allclose(out.attribute("knn_embedding").dense, expect)

    def test_enriched_event_passes_validation(self):
        schema = self.schemas[SourceType.AD_IMPRESSION].with_dense_attribute(
            "knn_embedding", SIZES.embedding_dim
        )
        out = enrich_event(make_ad_event(), self.index, self.codebook, k=2)
        assert validate_event(out, schema) == []

    def test_double_enrichment_rejected(self):
        once = enrich_event(make_ad_event(), self.index, self.codebook, k=2)
        with pytest.raises(AttributeBudgetError):
            enrich_event(once, self.index, self.codebook, k=2)

    def test_budget_cap(self):
        attrs = tuple(cat_attr(f"a{i}", 0) for i in range(10))
        full = Event(
            user_id=1, source=SourceType.AD_IMPRESSION, timestamp=5, attributes=attrs
        )
        with pytest.raises(AttributeBudgetError):
            enrich_event(full, self.index, self.codebook, k=1)


class TestPersistence:
    def test_index_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        index = KnnIndex(ids=np.arange(10), embeddings=rng.normal(size=(10, 3)))
        save_index(index, tmp_path / "i.bin")
        back = load_index(tmp_path / "i.bin")
        np.testing.assert_array_equal(back.ids, index.ids)
        np.testing.assert_array_equal(back.embeddings, index.embeddings)

    def test_codebook_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        cb = Codebook(centroids=rng.normal(size=(4, 6)))
        save_codebook(cb, tmp_path / "c.bin")
        back = load_codebook(tmp_path / "c.bin")
        np.testing.assert_array_equal(back.centroids, cb.centroids)
