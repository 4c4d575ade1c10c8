import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from tensorkb.estimator import KnowledgeBaseRanker

from conftest import random_store


def toy_triples(rng, n_entities=20, n_predicates=3, n=80):
    return random_store(rng, n_entities, n_predicates, n).triples


class TestSklearnProtocol:
    def test_get_params_roundtrip(self):
        est = KnowledgeBaseRanker(model="cp", rank=7, reg_weight=0.01)
        params = est.get_params()
        assert params["model"] == "cp"
        assert params["rank"] == 7
        again = KnowledgeBaseRanker(**params)
        assert again.get_params() == params

    def test_set_params(self):
        est = KnowledgeBaseRanker()
        est.set_params(rank=5, regularizer="fro")
        assert est.rank == 5
        assert est.regularizer == "fro"

    def test_clone(self, rng):
        est = KnowledgeBaseRanker(model="distmult", rank=4, epochs=2)
        est.fit(toy_triples(rng))
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()
        assert not hasattr(cloned, "model_")

    def test_unfitted_predict_raises(self):
        with pytest.raises(NotFittedError):
            KnowledgeBaseRanker().predict([[0, 0, 1]])


class TestFitPredict:
    def test_fit_returns_self_and_sets_attributes(self, rng):
        X = toy_triples(rng)
        est = KnowledgeBaseRanker(model="complex", rank=6, epochs=2)
        assert est.fit(X) is est
        assert est.n_entities_ == 20
        assert est.n_predicates_ == 3
        assert est.model_.n_predicates == 6  # reciprocal doubling internal
        assert len(est.history_.points) == 2

    def test_standard_formulation_predicate_count(self, rng):
        X = toy_triples(rng)
        est = KnowledgeBaseRanker(
            model="cp", rank=4, formulation="standard", epochs=1
        )
        est.fit(X)
        assert est.model_.n_predicates == 3

    def test_predict_scores_shape_and_order(self, rng):
        X = toy_triples(rng)
        est = KnowledgeBaseRanker(model="cp", rank=6, epochs=3).fit(X)
        scores = est.predict(X[:10])
        assert scores.shape == (10,)
        assert np.all(np.isfinite(scores))

    def test_deterministic_given_random_state(self, rng):
        X = toy_triples(rng)
        a = KnowledgeBaseRanker(rank=5, epochs=2, random_state=7).fit(X)
        b = KnowledgeBaseRanker(rank=5, epochs=2, random_state=7).fit(X)
        np.testing.assert_array_equal(a.predict(X), b.predict(X))

    def test_validation_fraction_selects_checkpoint(self, rng):
        X = toy_triples(rng, n=120)
        est = KnowledgeBaseRanker(
            rank=6, epochs=4, validation_fraction=0.2, random_state=1
        ).fit(X)
        assert est.history_.best_epoch is not None
        assert est.history_.best_valid_mrr is not None

    def test_explicit_validation_triples(self, rng):
        X = toy_triples(rng, n=100)
        est = KnowledgeBaseRanker(rank=5, epochs=3)
        est.fit(X[:80], validation_triples=X[80:])
        assert est.history_.best_valid_mrr is not None

    def test_bad_validation_fraction(self, rng):
        X = toy_triples(rng)
        with pytest.raises(ValueError):
            KnowledgeBaseRanker(validation_fraction=1.5).fit(X)

    def test_input_validation(self):
        est = KnowledgeBaseRanker()
        with pytest.raises(ValueError):
            est.fit(np.zeros((4, 2)))
        with pytest.raises(ValueError):
            est.fit(np.array([[0.5, 0, 1]]))
        with pytest.raises(ValueError):
            est.fit(np.array([[-1, 0, 1]]))

    def test_n_entities_override(self, rng):
        X = toy_triples(rng)
        est = KnowledgeBaseRanker(rank=4, epochs=1, n_entities=50).fit(X)
        assert est.n_entities_ == 50
        assert est.model_.n_entities == 50


class TestRankingMetrics:
    def test_score_is_filtered_mrr(self, rng):
        X = toy_triples(rng, n=100)
        est = KnowledgeBaseRanker(rank=8, epochs=5, reg_weight=1e-3).fit(X)
        mrr = est.score(X[:30])
        result = est.evaluate_ranking(X[:30])
        assert mrr == result.mrr
        assert 0.0 <= mrr <= 1.0

    def test_training_improves_training_mrr(self, rng):
        X = toy_triples(rng, n=150)
        short = KnowledgeBaseRanker(rank=10, epochs=1, random_state=0).fit(X)
        long = KnowledgeBaseRanker(rank=10, epochs=15, random_state=0).fit(X)
        assert long.score(X) > short.score(X)

    def test_extra_filter_triples_change_ranks(self, rng):
        """Filtering more known-true completions can only improve ranks."""
        X = toy_triples(rng, n=120)
        est = KnowledgeBaseRanker(rank=6, epochs=4).fit(X[:100])
        base = est.evaluate_ranking(X[100:])
        more = est.evaluate_ranking(X[100:], extra_filter_triples=X[:50])
        assert more.mrr >= base.mrr - 1e-12

    def test_by_type_breakdown(self, rng):
        X = toy_triples(rng, n=100)
        est = KnowledgeBaseRanker(rank=5, epochs=2).fit(X)
        result = est.evaluate_ranking(X[:20], by_type=True)
        assert result.breakdown is not None
        assert all(
            cat in ("1-1", "1-m", "m-1", "m-m") for cat in result.breakdown
        )
