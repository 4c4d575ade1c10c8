"""Factor models: parameter storage and fiber scoring for CP, DistMult and
ComplEx tensor factorizations.

A model assigns a real score to every triple (i, j, k). Scores are always
accessed as fibers (1-D slices with two indices fixed): the rhs fiber of
(i, j) holds the scores of (i, j, k) for every object k, the lhs fiber of
(j, k) the scores of (i, j, k) for every subject i. The predicted tensor is
never materialized.

Reduction-order contract: single-fiber calls and batched calls of up to
``GEMV_BATCH_LIMIT`` rows share one matrix-vector kernel per row and are
bitwise identical. Larger batches switch to a blocked matrix-matrix (BLAS
gemm) kernel for throughput; its results may deviate from the row kernel in
the last couple of ulps, which is documented and never affects rankings of
generic real-valued scores. ``score_triple`` uses an O(rank) dot product with
a fixed multiplication order per variant (symmetric in subject/object for
DistMult, so exchanging them reproduces the identical float computation).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from ._validation import (
    check_choice,
    check_index,
    check_positive_float,
    check_positive_int,
)

VARIANTS = ("cp", "distmult", "complex")
DTYPES = {"float64": np.float64, "float32": np.float32}

# Batches at or below this many rows use the per-row matrix-vector kernel,
# which is bitwise identical to single-fiber calls.
GEMV_BATCH_LIMIT = 64

CHECKPOINT_MAGIC = b"KBM1"
_VARIANT_CODES = {"cp": 0, "distmult": 1, "complex": 2}
_VARIANT_NAMES = {v: k for k, v in _VARIANT_CODES.items()}
_DTYPE_CODES = {"float64": 0, "float32": 1}
_DTYPE_NAMES = {v: k for k, v in _DTYPE_CODES.items()}


@dataclass(frozen=True)
class ModelConfig:
    """Construction parameters for a factor model."""

    variant: str = "complex"
    rank: int = 100
    init_scale: float = 1e-3
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        check_choice(self.variant, "variant", VARIANTS)
        check_positive_int(self.rank, "rank")
        check_positive_float(self.init_scale, "init_scale")
        check_choice(self.dtype, "dtype", tuple(DTYPES))

    def to_dict(self):
        return {
            "variant": self.variant,
            "rank": self.rank,
            "init_scale": self.init_scale,
            "seed": self.seed,
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _batched(single_fiber, pairs, n, dtype, fast_scores):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    b = len(pairs)
    if b <= GEMV_BATCH_LIMIT:
        out = np.empty((b, n), dtype=dtype)
        for row, (a, c) in enumerate(pairs):
            out[row] = single_fiber(int(a), int(c))
        return out
    return fast_scores(pairs)


class FactorModel:
    """Shared surface of the three factorization variants."""

    variant = None

    def __init__(self, n_entities, n_predicates, rank, dtype):
        self.n_entities = int(n_entities)
        self.n_predicates = int(n_predicates)
        self.rank = int(rank)
        self.dtype = np.dtype(dtype)

    # -- storage ---------------------------------------------------------
    def arrays(self):
        """Ordered name -> factor matrix mapping (the training parameters)."""
        raise NotImplementedError

    def copy(self):
        new = object.__new__(type(self))
        new.__dict__.update(
            {
                k: (v.copy() if isinstance(v, np.ndarray) else v)
                for k, v in self.__dict__.items()
            }
        )
        return new

    # -- scoring ---------------------------------------------------------
    def score(self, i, j, k):
        raise NotImplementedError

    def rhs_fiber(self, i, j):
        raise NotImplementedError

    def lhs_fiber(self, j, k):
        raise NotImplementedError

    def _fast_rhs(self, pairs):
        raise NotImplementedError

    def _fast_lhs(self, pairs):
        raise NotImplementedError

    def batch_rhs(self, pairs):
        """Score fibers for (subject, predicate) rows of ``pairs``, (B, N)."""
        return _batched(
            self.rhs_fiber, pairs, self.n_entities, self.dtype, self._fast_rhs
        )

    def batch_lhs(self, pairs):
        """Score fibers for (predicate, object) rows of ``pairs``, (B, N)."""
        return _batched(
            self.lhs_fiber, pairs, self.n_entities, self.dtype, self._fast_lhs
        )

    def _check_entity(self, idx, name):
        return check_index(idx, name, self.n_entities)

    def _check_predicate(self, idx):
        return check_index(idx, "predicate", self.n_predicates)

    def __repr__(self):
        return (
            f"{type(self).__name__}(N={self.n_entities}, P={self.n_predicates}, "
            f"R={self.rank}, dtype={self.dtype.name})"
        )


class CPModel(FactorModel):
    """Canonical polyadic decomposition with independent mode factors.

    The score of (i, j, k) is the rank-R contraction
    ``sum_r subject[i, r] * predicate[j, r] * object[k, r]``.
    """

    variant = "cp"

    def __init__(self, subject, predicate, object_):
        super().__init__(
            subject.shape[0], predicate.shape[0], subject.shape[1], subject.dtype
        )
        if object_.shape != subject.shape:
            raise ValueError("subject and object factors must have equal shapes")
        if predicate.shape[1] != subject.shape[1]:
            raise ValueError("factor ranks differ")
        self.subject = subject
        self.predicate = predicate
        self.object = object_

    def arrays(self):
        return {
            "subject": self.subject,
            "predicate": self.predicate,
            "object": self.object,
        }

    def score(self, i, j, k):
        i = self._check_entity(i, "subject")
        j = self._check_predicate(j)
        k = self._check_entity(k, "object")
        return float(np.dot(self.object[k], self.subject[i] * self.predicate[j]))

    def rhs_fiber(self, i, j):
        i = self._check_entity(i, "subject")
        j = self._check_predicate(j)
        return self.object @ (self.subject[i] * self.predicate[j])

    def lhs_fiber(self, j, k):
        j = self._check_predicate(j)
        k = self._check_entity(k, "object")
        return self.subject @ (self.predicate[j] * self.object[k])

    def _fast_rhs(self, pairs):
        profs = self.subject[pairs[:, 0]] * self.predicate[pairs[:, 1]]
        return profs @ self.object.T

    def _fast_lhs(self, pairs):
        profs = self.predicate[pairs[:, 0]] * self.object[pairs[:, 1]]
        return profs @ self.subject.T


class DistMultModel(FactorModel):
    """CP with subject and object factors shared: a symmetric-scoring model.

    ``score_triple`` multiplies the two entity rows together first, so the
    float computation for (i, j, k) and (k, j, i) is identical and the
    symmetry holds bitwise. Fibers multiply the anchor entity row with the
    predicate row first (the order is the same for both orientations, making
    rhs_fiber(i, j) and lhs_fiber(j, i) identical arrays).
    """

    variant = "distmult"

    def __init__(self, entity, predicate):
        super().__init__(
            entity.shape[0], predicate.shape[0], entity.shape[1], entity.dtype
        )
        if predicate.shape[1] != entity.shape[1]:
            raise ValueError("factor ranks differ")
        self.entity = entity
        self.predicate = predicate

    def arrays(self):
        return {"entity": self.entity, "predicate": self.predicate}

    def score(self, i, j, k):
        i = self._check_entity(i, "subject")
        j = self._check_predicate(j)
        k = self._check_entity(k, "object")
        return float(np.dot(self.predicate[j], self.entity[i] * self.entity[k]))

    def rhs_fiber(self, i, j):
        i = self._check_entity(i, "subject")
        j = self._check_predicate(j)
        return self.entity @ (self.entity[i] * self.predicate[j])

    def lhs_fiber(self, j, k):
        j = self._check_predicate(j)
        k = self._check_entity(k, "object")
        return self.entity @ (self.entity[k] * self.predicate[j])

    def _fast_rhs(self, pairs):
        profs = self.entity[pairs[:, 0]] * self.predicate[pairs[:, 1]]
        return profs @ self.entity.T

    def _fast_lhs(self, pairs):
        profs = self.entity[pairs[:, 1]] * self.predicate[pairs[:, 0]]
        return profs @ self.entity.T


class ComplExModel(FactorModel):
    """Complex-valued factorization scoring the real part of the contraction.

    Entities and predicates carry complex embeddings, stored as separate real
    and imaginary planes so fiber scoring reduces to real matrix products.
    The object-side embedding enters conjugated:

        score(i, j, k) = Re( sum_r E[i, r] * W[j, r] * conj(E[k, r]) )

    The induced real tensor is generically not symmetric in (i, k); with all
    imaginary parts zero it degenerates to DistMult on the real planes.
    """

    variant = "complex"

    def __init__(self, entity_re, entity_im, predicate_re, predicate_im):
        super().__init__(
            entity_re.shape[0],
            predicate_re.shape[0],
            entity_re.shape[1],
            entity_re.dtype,
        )
        for arr, ref in (
            (entity_im, entity_re),
            (predicate_im, predicate_re),
        ):
            if arr.shape != ref.shape:
                raise ValueError("real and imaginary planes must have equal shapes")
        if predicate_re.shape[1] != entity_re.shape[1]:
            raise ValueError("factor ranks differ")
        self.entity_re = entity_re
        self.entity_im = entity_im
        self.predicate_re = predicate_re
        self.predicate_im = predicate_im

    def arrays(self):
        return {
            "entity_re": self.entity_re,
            "entity_im": self.entity_im,
            "predicate_re": self.predicate_re,
            "predicate_im": self.predicate_im,
        }

    def _rhs_profile(self, i, j):
        a, b = self.entity_re[i], self.entity_im[i]
        c, d = self.predicate_re[j], self.predicate_im[j]
        return a * c - b * d, a * d + b * c

    def _lhs_profile(self, j, k):
        c, d = self.predicate_re[j], self.predicate_im[j]
        e, f = self.entity_re[k], self.entity_im[k]
        # (c + id) * conj(e + if) = (ce + df) + i(de - cf)
        return c * e + d * f, d * e - c * f

    def score(self, i, j, k):
        i = self._check_entity(i, "subject")
        j = self._check_predicate(j)
        k = self._check_entity(k, "object")
        p_re, p_im = self._rhs_profile(i, j)
        return float(
            np.dot(self.entity_re[k], p_re) + np.dot(self.entity_im[k], p_im)
        )

    def rhs_fiber(self, i, j):
        i = self._check_entity(i, "subject")
        j = self._check_predicate(j)
        p_re, p_im = self._rhs_profile(i, j)
        return self.entity_re @ p_re + self.entity_im @ p_im

    def lhs_fiber(self, j, k):
        j = self._check_predicate(j)
        k = self._check_entity(k, "object")
        g, h = self._lhs_profile(j, k)
        return self.entity_re @ g - self.entity_im @ h

    def _fast_rhs(self, pairs):
        a = self.entity_re[pairs[:, 0]]
        b = self.entity_im[pairs[:, 0]]
        c = self.predicate_re[pairs[:, 1]]
        d = self.predicate_im[pairs[:, 1]]
        return (a * c - b * d) @ self.entity_re.T + (a * d + b * c) @ self.entity_im.T

    def _fast_lhs(self, pairs):
        c = self.predicate_re[pairs[:, 0]]
        d = self.predicate_im[pairs[:, 0]]
        e = self.entity_re[pairs[:, 1]]
        f = self.entity_im[pairs[:, 1]]
        return (c * e + d * f) @ self.entity_re.T - (d * e - c * f) @ self.entity_im.T


def init_model(config, dims):
    """Draw a fresh model for ``dims = (n_entities, n_predicates)``.

    Entries are i.i.d. zero-mean Gaussian with standard deviation
    ``config.init_scale``, deterministic given ``config.seed``. Complex
    embeddings get independent real and imaginary planes, drawn in the fixed
    order entity_re, entity_im, predicate_re, predicate_im.
    """
    if not isinstance(config, ModelConfig):
        config = ModelConfig(**config)
    n_entities, n_predicates = (int(d) for d in dims)
    check_positive_int(n_entities, "n_entities")
    check_positive_int(n_predicates, "n_predicates")
    rng = np.random.default_rng(config.seed)
    dtype = DTYPES[config.dtype]

    def draw(shape):
        return (rng.standard_normal(shape) * config.init_scale).astype(dtype)

    r = config.rank
    if config.variant == "cp":
        return CPModel(
            draw((n_entities, r)), draw((n_predicates, r)), draw((n_entities, r))
        )
    if config.variant == "distmult":
        return DistMultModel(draw((n_entities, r)), draw((n_predicates, r)))
    return ComplExModel(
        draw((n_entities, r)),
        draw((n_entities, r)),
        draw((n_predicates, r)),
        draw((n_predicates, r)),
    )


# Functional aliases matching the operation-style surface.


def score_triple(model, i, j, k):
    """Score of a single triple."""
    return model.score(i, j, k)


def score_triples(model, triples):
    """Vectorized scores of an (n, 3) triple array.

    Values agree with per-triple :func:`score_triple` calls up to roundoff
    (the reductions are batched).
    """
    t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if len(t) == 0:
        return np.empty(0, dtype=model.dtype)
    if t.min() < 0 or max(t[:, 0].max(), t[:, 2].max()) >= model.n_entities:
        raise IndexError("entity index out of range")
    if t[:, 1].max() >= model.n_predicates:
        raise IndexError("predicate index out of range")
    i, j, k = t[:, 0], t[:, 1], t[:, 2]
    if isinstance(model, CPModel):
        return (model.subject[i] * model.predicate[j] * model.object[k]).sum(axis=1)
    if isinstance(model, DistMultModel):
        return (model.entity[i] * model.predicate[j] * model.entity[k]).sum(axis=1)
    a, b = model.entity_re[i], model.entity_im[i]
    c, d = model.predicate_re[j], model.predicate_im[j]
    e, f = model.entity_re[k], model.entity_im[k]
    return ((a * c - b * d) * e + (a * d + b * c) * f).sum(axis=1)


def score_rhs_fiber(model, i, j):
    """Scores of (i, j, k) for every object k, as one length-N vector."""
    return model.rhs_fiber(i, j)


def score_lhs_fiber(model, j, k):
    """Scores of (i, j, k) for every subject i. Used by the standard
    (non-reciprocal) formulation only."""
    return model.lhs_fiber(j, k)


def batch_score_rhs(model, pairs):
    """Row-stacked rhs fibers for a batch of (subject, predicate) pairs."""
    return model.batch_rhs(pairs)


def batch_score_lhs(model, pairs):
    """Row-stacked lhs fibers for a batch of (predicate, object) pairs."""
    return model.batch_lhs(pairs)


def save_checkpoint(model, path, metadata=None):
    """Write model parameters to ``path`` plus a JSON sidecar ``path + '.json'``.

    Binary layout: magic ``KBM1``, u8 variant code, u8 dtype code, u32 N,
    u32 P, u32 R, then the factor matrices in ``arrays()`` order, row-major
    little-endian. The sidecar records the header fields and any provenance
    ``metadata`` (typically the full training configuration).
    """
    dtype_name = model.dtype.name
    if dtype_name not in _DTYPE_CODES:
        raise ValueError(f"unsupported checkpoint dtype {dtype_name}")
    wire = "<f8" if dtype_name == "float64" else "<f4"
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(
            struct.pack(
                "<BBIII",
                _VARIANT_CODES[model.variant],
                _DTYPE_CODES[dtype_name],
                model.n_entities,
                model.n_predicates,
                model.rank,
            )
        )
        for arr in model.arrays().values():
            fh.write(np.ascontiguousarray(arr, dtype=wire).tobytes())
    sidecar = {
        "variant": model.variant,
        "n_entities": model.n_entities,
        "n_predicates": model.n_predicates,
        "rank": model.rank,
        "dtype": dtype_name,
        "metadata": metadata if metadata is not None else {},
    }
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint`.

    Returns ``(model, metadata)`` where metadata comes from the JSON sidecar
    when present (empty dict otherwise).
    """
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        variant_code, dtype_code, n, p, r = struct.unpack("<BBIII", fh.read(14))
        variant = _VARIANT_NAMES[variant_code]
        dtype_name = _DTYPE_NAMES[dtype_code]
        wire = "<f8" if dtype_name == "float64" else "<f4"
        itemsize = 8 if dtype_name == "float64" else 4

        def read(shape):
            count = shape[0] * shape[1]
            raw = fh.read(count * itemsize)
            if len(raw) != count * itemsize:
                raise ValueError(f"{path}: truncated checkpoint")
            arr = np.frombuffer(raw, dtype=wire).reshape(shape)
            return arr.astype(DTYPES[dtype_name])

        if variant == "cp":
            model = CPModel(read((n, r)), read((p, r)), read((n, r)))
        elif variant == "distmult":
            model = DistMultModel(read((n, r)), read((p, r)))
        else:
            model = ComplExModel(
                read((n, r)), read((n, r)), read((p, r)), read((p, r))
            )
    for name, arr in model.arrays().items():
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{path}: non-finite entries in factor {name!r}")
    metadata = {}
    try:
        with open(str(path) + ".json", "r", encoding="utf-8") as fh:
            metadata = json.load(fh).get("metadata", {})
    except FileNotFoundError:
        pass
    return model, metadata
