"""Scikit-learn style estimator facade over the training and evaluation
pipeline, so the factorization models compose with standard tooling
(``get_params``/``set_params``, ``clone``, grid utilities).

``X`` is an (n, 3) integer array of (subject, predicate, object) triples
with raw (non-reciprocal) predicate indices; reciprocal augmentation is an
internal detail of the chosen formulation.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._validation import check_triples
from .datasets import TripleStore, augment_reciprocal, build_filter_index
from .evaluation import evaluate
from .models import ModelConfig, score_triples
from .training import RegularizerConfig, TrainConfig, fit


class KnowledgeBaseRanker(BaseEstimator):
    """Link-prediction ranker backed by a tensor factorization model.

    Parameters
    ----------
    model : {"cp", "distmult", "complex"}
        Factorization variant.
    rank : int
        Number of rank-one components.
    formulation : {"standard", "reciprocal"}
        "reciprocal" trains object fibers of the predicate-doubled store and
        answers (?, j, k) queries through the reciprocal predicate; it is
        invariant to the stored orientation of predicates.
    regularizer : {"none", "fro", "n3", "n2"}
        Penalty variant; see :mod:`tensorkb.objectives`.
    reg_weight : float
        Penalty weight (lambda).
    learning_rate, batch_size, epochs, eval_every : training loop controls
        (Adagrad, per-batch sum reduction).
    init_scale : float
        Standard deviation of the Gaussian parameter initialization.
    dtype : {"float64", "float32"}
        Parameter and accumulator precision.
    validation_fraction : float
        When positive and no explicit validation set is passed to ``fit``,
        this fraction of the training triples is held out; the fitted model
        is the best-validation-MRR checkpoint.
    valid_cap : int or None
        Optional cap on validation triples scored per evaluation epoch.
    n_entities, n_predicates : int or None
        Vocabulary sizes; inferred from the data when None.
    random_state : int
        Seed for initialization, shuffling and the validation split.
    verbose : int
        Nonzero prints one line per epoch.

    Attributes
    ----------
    model_ : fitted factor model (see :mod:`tensorkb.models`)
    history_ : :class:`tensorkb.training.TrainHistory`
    n_entities_, n_predicates_ : resolved vocabulary sizes
    """

    def __init__(self, model="complex", rank=100, formulation="reciprocal",
                 regularizer="n3", reg_weight=0.0, learning_rate=0.1,
                 batch_size=100, epochs=20, eval_every=1, init_scale=1e-3,
                 dtype="float64", validation_fraction=0.0, valid_cap=None,
                 n_entities=None, n_predicates=None, random_state=0,
                 verbose=0):
        self.model = model
        self.rank = rank
        self.formulation = formulation
        self.regularizer = regularizer
        self.reg_weight = reg_weight
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.eval_every = eval_every
        self.init_scale = init_scale
        self.dtype = dtype
        self.validation_fraction = validation_fraction
        self.valid_cap = valid_cap
        self.n_entities = n_entities
        self.n_predicates = n_predicates
        self.random_state = random_state
        self.verbose = verbose

    def _train_config(self):
        return TrainConfig(
            model=ModelConfig(
                variant=self.model,
                rank=self.rank,
                init_scale=self.init_scale,
                seed=self.random_state,
                dtype=self.dtype,
            ),
            formulation=self.formulation,
            regularizer=RegularizerConfig(self.regularizer, self.reg_weight),
            batch_size=self.batch_size,
            epochs=self.epochs,
            eval_every=self.eval_every,
            learning_rate=self.learning_rate,
            seed=self.random_state,
            valid_cap=self.valid_cap,
        )

    def fit(self, X, y=None, validation_triples=None):
        """Fit the factorization to an (n, 3) triple array.

        ``validation_triples`` (raw triples) enable best-checkpoint
        selection by filtered MRR; without them ``validation_fraction``
        controls an internal holdout, and with neither the final-epoch
        parameters are kept.
        """
        X = check_triples(X, self.n_entities, self.n_predicates, name="X")
        if len(X) == 0:
            raise ValueError("cannot fit on an empty triple array")
        config = self._train_config()

        arrays = [X]
        if validation_triples is not None:
            validation_triples = check_triples(
                validation_triples, self.n_entities, self.n_predicates,
                name="validation_triples",
            )
            arrays.append(validation_triples)
        all_idx = np.concatenate(arrays)
        n_entities = self.n_entities or int(
            max(all_idx[:, 0].max(), all_idx[:, 2].max())
        ) + 1
        n_predicates = self.n_predicates or int(all_idx[:, 1].max()) + 1

        train_triples = X
        if validation_triples is None and self.validation_fraction:
            frac = float(self.validation_fraction)
            if not 0.0 < frac < 1.0:
                raise ValueError(
                    "validation_fraction must be in (0, 1), got "
                    f"{self.validation_fraction}"
                )
            rng = np.random.default_rng(self.random_state)
            n_valid = max(1, int(round(frac * len(X))))
            if n_valid >= len(X):
                raise ValueError("validation_fraction leaves no training data")
            perm = rng.permutation(len(X))
            validation_triples = X[np.sort(perm[:n_valid])]
            train_triples = X[np.sort(perm[n_valid:])]

        train_store = TripleStore(train_triples, n_entities, n_predicates)
        valid_store = None
        filter_index = None
        if validation_triples is not None and len(validation_triples):
            valid_store = TripleStore(
                validation_triples, n_entities, n_predicates, split_tag="valid"
            )
            filter_index = build_filter_index(
                [train_store, valid_store], reciprocal=True
            )

        if self.formulation == "reciprocal":
            train_store = augment_reciprocal(train_store)

        callback = None
        if self.verbose:
            def callback(point):
                mrr = "" if point.valid_mrr is None else f" valid_mrr={point.valid_mrr:.4f}"
                print(f"epoch {point.epoch}/{self.epochs} "
                      f"loss={point.train_loss:.4f}{mrr}")

        self.model_, self.history_ = fit(
            config, train_store, valid=valid_store, filter_index=filter_index
        )
        self.n_entities_ = n_entities
        self.n_predicates_ = n_predicates
        self.train_triples_ = X
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "this KnowledgeBaseRanker is not fitted; call fit first"
            )

    def predict(self, X):
        """Model scores of the given triples (higher means more plausible)."""
        self._check_fitted()
        X = check_triples(X, self.n_entities_, self.n_predicates_, name="X")
        return score_triples(self.model_, X)

    def decision_function(self, X):
        return self.predict(X)

    def evaluate_ranking(self, X, extra_filter_triples=None, by_type=False):
        """Filtered ranking metrics over both orientations of the triples.

        Known-true completions are drawn from the training triples, ``X``
        itself and ``extra_filter_triples`` (e.g. a validation split when
        scoring test data).
        """
        self._check_fitted()
        X = check_triples(X, self.n_entities_, self.n_predicates_, name="X")
        if len(X) == 0:
            raise ValueError("cannot evaluate an empty triple array")
        stores = [
            TripleStore(self.train_triples_, self.n_entities_, self.n_predicates_),
            TripleStore(X, self.n_entities_, self.n_predicates_, split_tag="eval"),
        ]
        if extra_filter_triples is not None:
            extra = check_triples(
                extra_filter_triples, self.n_entities_, self.n_predicates_,
                name="extra_filter_triples",
            )
            if len(extra):
                stores.append(
                    TripleStore(
                        extra, self.n_entities_, self.n_predicates_,
                        split_tag="filter",
                    )
                )
        filter_index = build_filter_index(stores, reciprocal=True)
        type_table = None
        if by_type:
            from .datasets import relation_type_table

            type_table = relation_type_table(augment_reciprocal(stores[0]))
        return evaluate(
            self.model_, stores[1], filter_index, mode=self.formulation,
            type_table=type_table,
        )

    def score(self, X, y=None):
        """Filtered MRR over ``X`` (the natural goodness-of-ranking metric)."""
        return self.evaluate_ranking(X).mrr
