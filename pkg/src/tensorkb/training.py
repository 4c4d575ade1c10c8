"""Training loop: Adagrad on the fiber losses plus a regularization penalty,
with seeded shuffling, per-epoch history and best-validation checkpointing.

Reciprocal training runs on a reciprocal-augmented store. The augmented list
interleaves each original triple with its reciprocal image; epochs shuffle
the pairs while keeping the two images adjacent, so with an even batch size
both images always share a minibatch. This keeps the objective invariant
(up to float summation order) under flipping the stored orientation of any
predicate together with swapping its two predicate-parameter rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._validation import (
    check_choice,
    check_nonnegative_float,
    check_positive_float,
    check_positive_int,
)
from .datasets import TripleStore, compute_marginals
from .evaluation import evaluate
from .models import DTYPES, ModelConfig, VARIANTS, init_model
from .objectives import (
    fro_penalty_sampled,
    n2_weighted_penalty,
    n3_penalty_sampled,
    reciprocal_loss,
    standard_loss,
)

FORMULATIONS = ("standard", "reciprocal")
REGULARIZERS = ("none", "fro", "n3", "n2")

ADAGRAD_EPSILON = 1e-10


class ConfigError(ValueError):
    """Invalid configuration; lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__(
            "invalid configuration:\n"
            + "\n".join(f"  - {e}" for e in self.errors)
        )


class TrainingDivergedError(RuntimeError):
    """Non-finite training loss; training aborts rather than clipping."""

    def __init__(self, epoch, batch_index, loss):
        self.epoch = epoch
        self.batch_index = batch_index
        super().__init__(
            f"non-finite loss {loss!r} at epoch {epoch}, batch {batch_index}; "
            "reduce the learning rate or regularization weight"
        )


@dataclass(frozen=True)
class RegularizerConfig:
    """Penalty variant and weight.

    ``fro``: squared norms of the sampled rows. ``n3``: cubed entry moduli of
    the sampled rows (the nuclear 3-norm surrogate). ``n2``: marginal-weighted
    column 2-norms cubed, applied densely.
    """

    variant: str = "none"
    weight: float = 0.0

    def __post_init__(self):
        check_choice(self.variant, "regularizer variant", REGULARIZERS)
        check_nonnegative_float(self.weight, "regularizer weight")

    def to_dict(self):
        return {"variant": self.variant, "weight": self.weight}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run."""

    model: ModelConfig = field(default_factory=ModelConfig)
    formulation: str = "reciprocal"
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)
    batch_size: int = 100
    epochs: int = 20
    eval_every: int = 1
    learning_rate: float = 1e-1
    seed: int = 0
    valid_cap: Optional[int] = None

    def __post_init__(self):
        check_choice(self.formulation, "formulation", FORMULATIONS)
        check_positive_int(self.batch_size, "batch_size")
        check_positive_int(self.epochs, "epochs")
        check_positive_int(self.eval_every, "eval_every")
        check_positive_float(self.learning_rate, "learning_rate")
        if self.valid_cap is not None:
            check_positive_int(self.valid_cap, "valid_cap")

    def to_dict(self):
        return {
            "model": self.model.to_dict(),
            "formulation": self.formulation,
            "regularizer": self.regularizer.to_dict(),
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "eval_every": self.eval_every,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "valid_cap": self.valid_cap,
        }

    @classmethod
    def from_dict(cls, d):
        """Build a config from a plain dict, reporting every error at once."""
        errors = []
        known = {
            "model", "formulation", "regularizer", "batch_size", "epochs",
            "eval_every", "learning_rate", "seed", "valid_cap",
        }
        for key in d:
            if key not in known:
                errors.append(f"unknown field {key!r}")

        model_cfg = None
        model_d = d.get("model", {})
        if not isinstance(model_d, dict):
            errors.append("'model' must be a table/object")
        else:
            model_errors = []
            if "variant" in model_d and model_d["variant"] not in VARIANTS:
                model_errors.append(
                    f"model.variant must be one of {sorted(VARIANTS)}, "
                    f"got {model_d['variant']!r}"
                )
            if "dtype" in model_d and model_d["dtype"] not in DTYPES:
                model_errors.append(
                    f"model.dtype must be one of {sorted(DTYPES)}, "
                    f"got {model_d['dtype']!r}"
                )
            if model_errors:
                errors.extend(model_errors)
            else:
                try:
                    model_cfg = ModelConfig.from_dict(model_d)
                except (TypeError, ValueError) as exc:
                    errors.append(f"model: {exc}")

        reg_cfg = None
        reg_d = d.get("regularizer", {})
        if not isinstance(reg_d, dict):
            errors.append("'regularizer' must be a table/object")
        else:
            try:
                reg_cfg = RegularizerConfig.from_dict(reg_d)
            except (TypeError, ValueError) as exc:
                errors.append(f"regularizer: {exc}")

        simple = {}
        for name, checker in (
            ("formulation", lambda v: check_choice(v, "formulation", FORMULATIONS)),
            ("batch_size", lambda v: check_positive_int(v, "batch_size")),
            ("epochs", lambda v: check_positive_int(v, "epochs")),
            ("eval_every", lambda v: check_positive_int(v, "eval_every")),
            ("learning_rate", lambda v: check_positive_float(v, "learning_rate")),
            ("valid_cap", lambda v: v if v is None else check_positive_int(v, "valid_cap")),
        ):
            if name in d:
                try:
                    simple[name] = checker(d[name])
                except (TypeError, ValueError) as exc:
                    errors.append(str(exc))
        if "seed" in d:
            if isinstance(d["seed"], bool) or not isinstance(d["seed"], int):
                errors.append(f"seed must be an integer, got {d['seed']!r}")
            else:
                simple["seed"] = d["seed"]

        if errors:
            raise ConfigError(errors)
        return cls(model=model_cfg, regularizer=reg_cfg, **simple)


@dataclass(frozen=True)
class HistoryPoint:
    epoch: int
    train_loss: float
    valid_mrr: Optional[float] = None


@dataclass
class TrainHistory:
    """Per-epoch loss, periodic validation MRR and the best checkpoint seen."""

    points: list = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_valid_mrr: Optional[float] = None

    def to_dict(self):
        return {
            "points": [
                {"epoch": p.epoch, "train_loss": p.train_loss,
                 "valid_mrr": p.valid_mrr}
                for p in self.points
            ],
            "best_epoch": self.best_epoch,
            "best_valid_mrr": self.best_valid_mrr,
        }

    def to_csv(self):
        lines = ["epoch,loss,valid_mrr"]
        for p in self.points:
            mrr = "" if p.valid_mrr is None else repr(p.valid_mrr)
            lines.append(f"{p.epoch},{p.train_loss!r},{mrr}")
        return "\n".join(lines) + "\n"


@dataclass
class OptimizerState:
    """Adagrad state: per-parameter accumulated squared gradients.

    Accumulators start at zero and are nondecreasing; the update for
    gradient g is ``param -= lr * g / (sqrt(accumulator) + epsilon)``.
    """

    learning_rate: float
    epsilon: float = ADAGRAD_EPSILON
    accumulators: dict = field(default_factory=dict)

    @classmethod
    def for_model(cls, model, learning_rate, epsilon=ADAGRAD_EPSILON):
        return cls(
            learning_rate=check_positive_float(learning_rate, "learning_rate"),
            epsilon=epsilon,
            accumulators={
                name: np.zeros_like(arr) for name, arr in model.arrays().items()
            },
        )


def adagrad_step(state, model, grads):
    """One Adagrad update in place; returns the updated (state, model).

    Row-sparse gradient pieces update only the touched rows and their
    accumulators. Duplicate rows within a batch are combined before the
    accumulator update, and any dense piece for the same parameter absorbs
    the sparse pieces so each parameter sees a single combined gradient.
    """
    lr = state.learning_rate
    eps = state.epsilon
    for name, arr in model.arrays().items():
        acc = state.accumulators[name]
        dense = grads.dense.get(name)
        combined = grads.combined_rows(name)
        if dense is not None:
            if combined is not None:
                dense[combined[0]] += combined[1]
            acc += dense * dense
            denom = np.sqrt(acc)
            denom += eps
            arr -= lr * dense / denom
        elif combined is not None:
            idx, vals = combined
            acc[idx] += vals * vals
            denom = np.sqrt(acc[idx])
            denom += eps
            arr[idx] -= lr * vals / denom
    return state, model


def _epoch_order(rng, n_examples, reciprocal):
    if not reciprocal:
        return rng.permutation(n_examples)
    # Shuffle (original, reciprocal) pairs, keeping the two images adjacent.
    slots = rng.permutation(n_examples // 2)
    order = np.empty(n_examples, dtype=np.int64)
    order[0::2] = 2 * slots
    order[1::2] = 2 * slots + 1
    return order


def fit(config, train, valid=None, filter_index=None, initial_model=None,
        callback=None):
    """Train a model on ``train``; return (best model, history).

    In the reciprocal formulation ``train`` must be a reciprocal-augmented
    store (the model then has 2P predicate rows); in the standard formulation
    it must be raw. When ``valid`` (a raw store) and ``filter_index`` are
    given, the validation filtered MRR is computed every ``eval_every``
    epochs and the returned model is the checkpoint with the best validation
    MRR; otherwise the final model is returned.

    With regularizer ``n2`` the dense penalty enters each minibatch scaled by
    batch_size / n_examples so one epoch accounts for the penalty exactly
    once, matching the per-example accounting of the sampled penalties.
    """
    if not isinstance(config, TrainConfig):
        raise TypeError("config must be a TrainConfig")
    if not isinstance(train, TripleStore):
        raise TypeError("train must be a TripleStore")
    reciprocal = config.formulation == "reciprocal"
    if reciprocal and not train.augmented:
        raise ValueError(
            "reciprocal formulation requires a reciprocal-augmented train "
            "store (see augment_reciprocal)"
        )
    if not reciprocal and train.augmented:
        raise ValueError("standard formulation requires a raw train store")
    if len(train) == 0:
        raise ValueError("empty train store")
    if valid is not None:
        if valid.augmented:
            raise ValueError("valid must be a raw store")
        if filter_index is None:
            raise ValueError("validation requires a filter_index")
        if valid.n_entities != train.n_entities:
            raise ValueError("train/valid entity-count mismatch")
        expected_raw = train.n_predicates // 2 if reciprocal else train.n_predicates
        if valid.n_predicates != expected_raw:
            raise ValueError(
                f"valid store has {valid.n_predicates} predicates; the train "
                f"store implies {expected_raw} raw predicates"
            )
        if filter_index.n_directed_predicates != 2 * expected_raw:
            raise ValueError(
                "filter_index must cover both orientations of the raw "
                "predicates (build with reciprocal=True)"
            )

    dims = (train.n_entities, train.n_predicates)
    if initial_model is not None:
        if initial_model.variant != config.model.variant:
            raise ValueError("initial_model variant does not match config")
        if (initial_model.n_entities, initial_model.n_predicates) != dims:
            raise ValueError("initial_model dimensions do not match train store")
        if initial_model.rank != config.model.rank:
            raise ValueError("initial_model rank does not match config")
        model = initial_model.copy()
    else:
        model = init_model(config.model, dims)

    reg = config.regularizer
    lam = reg.weight
    marginals = None
    if reg.variant == "n2" and lam > 0.0:
        marginals = compute_marginals(train)

    eval_valid = valid
    if valid is not None and config.valid_cap is not None and len(valid) > config.valid_cap:
        sub_rng = np.random.default_rng(
            np.random.SeedSequence([config.seed, 1]).generate_state(1)[0]
        )
        keep = np.sort(
            sub_rng.choice(len(valid), size=config.valid_cap, replace=False)
        )
        eval_valid = TripleStore(
            valid.triples[keep], valid.n_entities, valid.n_predicates,
            split_tag=valid.split_tag, validate=False,
        )

    state = OptimizerState.for_model(model, config.learning_rate)
    rng = np.random.default_rng(config.seed)
    loss_fn = reciprocal_loss if reciprocal else standard_loss
    n_examples = len(train)
    n_batches = math.ceil(n_examples / config.batch_size)

    history = TrainHistory()
    best_model = None

    for epoch in range(1, config.epochs + 1):
        order = _epoch_order(rng, n_examples, reciprocal)
        epoch_loss = 0.0
        for b in range(n_batches):
            sel = order[b * config.batch_size:(b + 1) * config.batch_size]
            batch = train.triples[sel]
            loss, grads = loss_fn(model, batch)
            if lam > 0.0:
                if reg.variant == "fro":
                    pval, pgrads = fro_penalty_sampled(model, batch, lam)
                elif reg.variant == "n3":
                    pval, pgrads = n3_penalty_sampled(model, batch, lam)
                elif reg.variant == "n2":
                    frac = len(batch) / n_examples
                    pval, pgrads = n2_weighted_penalty(model, marginals, lam)
                    pval *= frac
                    pgrads.scale(frac)
                else:
                    pval, pgrads = 0.0, None
                if pgrads is not None:
                    loss += pval
                    grads.merge(pgrads)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, b, loss)
            adagrad_step(state, model, grads)
            epoch_loss += loss

        valid_mrr = None
        if eval_valid is not None and (
            epoch % config.eval_every == 0 or epoch == config.epochs
        ):
            valid_mrr = evaluate(
                model, eval_valid, filter_index, mode=config.formulation
            ).mrr
            if history.best_valid_mrr is None or valid_mrr > history.best_valid_mrr:
                history.best_valid_mrr = valid_mrr
                history.best_epoch = epoch
                best_model = model.copy()

        point = HistoryPoint(epoch=epoch, train_loss=epoch_loss, valid_mrr=valid_mrr)
        history.points.append(point)
        if callback is not None:
            callback(point)

    return (best_model if best_model is not None else model), history
