"""Triple datasets: ingestion, vocabularies, reciprocal augmentation, filter
indices, sampling marginals and relation-type statistics.

A knowledge base is a set of (subject, predicate, object) index triples over
an entity vocabulary of size N and a predicate vocabulary of size P. All
products of this module (stores, filter indices, marginals, degree tables)
are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_triples

CACHE_MAGIC = b"KBC1"


class DataError(Exception):
    """Base class for dataset ingestion errors."""


class TripleParseError(DataError):
    """A line of a triple file does not have exactly three tab-separated fields."""

    def __init__(self, path, line_number, line):
        self.path = str(path)
        self.line_number = line_number
        super().__init__(
            f"{path}:{line_number}: expected 'subject\\tpredicate\\tobject', "
            f"got {line!r}"
        )


class UnknownTokenError(DataError):
    """A string does not resolve under a fixed vocabulary."""

    def __init__(self, path, line_number, kind, token):
        self.path = str(path)
        self.line_number = line_number
        self.token = token
        super().__init__(
            f"{path}:{line_number}: unknown {kind} {token!r} under fixed vocabulary"
        )


class DuplicateTripleError(DataError):
    """The same (subject, predicate, object) triple occurs more than once."""


class Vocabulary:
    """Bijective string <-> dense index mapping, in first-appearance order."""

    def __init__(self, tokens=()):
        self._index = {}
        self._tokens = []
        for tok in tokens:
            self.add(tok)

    def add(self, token):
        """Return the index of ``token``, inserting it if unseen."""
        idx = self._index.get(token)
        if idx is None:
            idx = len(self._tokens)
            self._index[token] = idx
            self._tokens.append(token)
        return idx

    def index(self, token):
        return self._index[token]

    def token(self, index):
        return self._tokens[index]

    def __contains__(self, token):
        return token in self._index

    def __len__(self):
        return len(self._tokens)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    def tokens(self):
        return list(self._tokens)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self._tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls(line.rstrip("\n") for line in fh)


class TripleStore:
    """An indexed list of triples with its vocabulary sizes.

    The store is the sparse boolean tensor of known facts: entry (i, j, k) is
    present iff the triple appears in ``triples``. Indices are dense:
    subjects/objects in [0, n_entities), predicates in [0, n_predicates).

    ``augmented`` marks a store produced by :func:`augment_reciprocal`; such a
    store interleaves each original triple with its reciprocal image and has
    its predicate count doubled. Re-augmenting is rejected.
    """

    def __init__(self, triples, n_entities, n_predicates, split_tag="train",
                 augmented=False, validate=True):
        triples = check_triples(triples, name="triples")
        if validate:
            check_triples(triples, n_entities, n_predicates)
            if len(triples):
                packed = (
                    triples[:, 0] * (n_predicates * n_entities)
                    + triples[:, 1] * n_entities
                    + triples[:, 2]
                )
                n_unique = len(np.unique(packed))
                if n_unique != len(triples):
                    raise DuplicateTripleError(
                        f"{len(triples) - n_unique} duplicate triple(s) in store"
                    )
        self.triples = triples
        self.triples.setflags(write=False)
        self.n_entities = int(n_entities)
        self.n_predicates = int(n_predicates)
        self.split_tag = split_tag
        self.augmented = bool(augmented)

    def __len__(self):
        return len(self.triples)

    def __repr__(self):
        return (
            f"TripleStore({len(self)} triples, N={self.n_entities}, "
            f"P={self.n_predicates}, split={self.split_tag!r}"
            + (", augmented" if self.augmented else "")
            + ")"
        )


def load_triples(path, vocab=None, split_tag="train"):
    """Load a tab-separated triple file into a :class:`TripleStore`.

    Each line is ``subject<TAB>predicate<TAB>object`` (UTF-8). When ``vocab``
    (a pair of entity and predicate vocabularies) is given, every string must
    resolve; otherwise vocabularies are built in first-appearance order so
    repeated runs are byte-for-byte reproducible.

    Returns ``(store, (entity_vocab, predicate_vocab))``.
    """
    if vocab is None:
        ent_vocab, pred_vocab = Vocabulary(), Vocabulary()
        fixed = False
    else:
        ent_vocab, pred_vocab = vocab
        fixed = True

    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise TripleParseError(path, lineno, line)
            sub, pred, obj = fields
            if fixed:
                try:
                    i = ent_vocab.index(sub)
                except KeyError:
                    raise UnknownTokenError(path, lineno, "entity", sub) from None
                try:
                    j = pred_vocab.index(pred)
                except KeyError:
                    raise UnknownTokenError(path, lineno, "predicate", pred) from None
                try:
                    k = ent_vocab.index(obj)
                except KeyError:
                    raise UnknownTokenError(path, lineno, "entity", obj) from None
            else:
                i = ent_vocab.add(sub)
                j = pred_vocab.add(pred)
                k = ent_vocab.add(obj)
            rows.append((i, j, k))

    triples = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
    store = TripleStore(
        triples, len(ent_vocab), len(pred_vocab), split_tag=split_tag
    )
    return store, (ent_vocab, pred_vocab)


def augment_reciprocal(store):
    """Append the reciprocal image of every triple, doubling the predicate set.

    For each input triple (i, j, k) the output contains (i, j, k) and
    (k, j + P, i), interleaved so that a triple and its reciprocal occupy
    adjacent positions (2t, 2t + 1). The output has 2P predicates and twice
    the triples. Augmenting an already augmented store is an error.
    """
    if store.augmented:
        raise ValueError(
            "store is already reciprocal-augmented; augmenting twice would "
            "silently quadruple the predicate set"
        )
    t = store.triples
    out = np.empty((2 * len(t), 3), dtype=np.int64)
    out[0::2] = t
    out[1::2, 0] = t[:, 2]
    out[1::2, 1] = t[:, 1] + store.n_predicates
    out[1::2, 2] = t[:, 0]
    return TripleStore(
        out,
        store.n_entities,
        2 * store.n_predicates,
        split_tag=store.split_tag,
        augmented=True,
        validate=False,
    )


class FilterIndex:
    """Known-true completions per (anchor entity, directed predicate) query.

    Directed predicates follow the reciprocal convention: key (i, j) with
    j < P holds the objects k of triples (i, j, k); key (k, j + P) holds the
    subjects i. Lookups to absent keys return an empty array.
    """

    def __init__(self, groups, n_entities, n_directed_predicates):
        self._groups = groups
        self.n_entities = int(n_entities)
        self.n_directed_predicates = int(n_directed_predicates)

    def _key(self, anchor, directed_predicate):
        return int(anchor) * self.n_directed_predicates + int(directed_predicate)

    def completions(self, anchor, directed_predicate):
        """Sorted array of known-true completions for the query."""
        out = self._groups.get(self._key(anchor, directed_predicate))
        if out is None:
            return np.empty(0, dtype=np.int64)
        return out

    def __len__(self):
        return len(self._groups)

    def save(self, path):
        keys = np.fromiter(self._groups.keys(), dtype=np.int64, count=len(self._groups))
        order = np.argsort(keys, kind="stable")
        keys = keys[order]
        values = [self._groups[int(k)] for k in keys]
        lengths = np.array([len(v) for v in values], dtype=np.int64)
        flat = np.concatenate(values) if values else np.empty(0, dtype=np.int64)
        np.savez_compressed(
            path,
            keys=keys,
            lengths=lengths,
            values=flat,
            dims=np.array([self.n_entities, self.n_directed_predicates], dtype=np.int64),
        )

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            keys = data["keys"]
            lengths = data["lengths"]
            flat = data["values"]
            n_entities, n_directed = (int(x) for x in data["dims"])
        groups = {}
        offsets = np.concatenate(([0], np.cumsum(lengths)))
        for key, lo, hi in zip(keys, offsets[:-1], offsets[1:]):
            arr = flat[lo:hi].copy()
            arr.setflags(write=False)
            groups[int(key)] = arr
        return cls(groups, n_entities, n_directed)


def build_filter_index(stores, reciprocal=False):
    """Index all known-true completions across the given stores.

    With ``reciprocal=True`` each triple (i, j, k) additionally contributes a
    reverse entry (k, j + P) -> i, so both query orientations can be filtered.
    Completion sets for (i, j, ?) and the reverse orientation are kept
    separate. All stores must agree on N and P (so raw and augmented stores
    cannot be mixed).
    """
    stores = list(stores)
    if not stores:
        raise ValueError("need at least one store")
    n_entities = stores[0].n_entities
    n_predicates = stores[0].n_predicates
    for s in stores:
        if s.n_entities != n_entities or s.n_predicates != n_predicates:
            raise ValueError(
                f"store dimensions differ: ({s.n_entities}, {s.n_predicates}) "
                f"vs ({n_entities}, {n_predicates})"
            )
    n_directed = 2 * n_predicates if reciprocal else n_predicates

    parts = []
    for s in stores:
        t = s.triples
        if len(t) == 0:
            continue
        parts.append(np.stack((t[:, 0] * n_directed + t[:, 1], t[:, 2]), axis=1))
        if reciprocal:
            parts.append(
                np.stack(
                    (t[:, 2] * n_directed + t[:, 1] + n_predicates, t[:, 0]), axis=1
                )
            )
    groups = {}
    if parts:
        pairs = np.concatenate(parts)
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        pairs = pairs[order]
        keys, starts = np.unique(pairs[:, 0], return_index=True)
        bounds = np.append(starts, len(pairs))
        for key, lo, hi in zip(keys, bounds[:-1], bounds[1:]):
            vals = np.unique(pairs[lo:hi, 1])
            vals.setflags(write=False)
            groups[int(key)] = vals
    return FilterIndex(groups, n_entities, n_directed)


@dataclass(frozen=True)
class ModeMarginals:
    """Empirical probability of each index appearing in each triple mode.

    ``q1[i]`` is the fraction of triples whose subject is i, ``q2[j]`` the
    fraction with predicate j, ``q3[k]`` the fraction with object k. Each
    vector is nonnegative and sums to one.
    """

    q1: np.ndarray
    q2: np.ndarray
    q3: np.ndarray


def compute_marginals(store):
    """Per-mode index frequencies of a uniformly sampled triple."""
    if len(store) == 0:
        raise ValueError("cannot compute marginals of an empty store")
    t = store.triples
    n = float(len(t))
    q1 = np.bincount(t[:, 0], minlength=store.n_entities) / n
    q2 = np.bincount(t[:, 1], minlength=store.n_predicates) / n
    q3 = np.bincount(t[:, 2], minlength=store.n_entities) / n
    for q in (q1, q2, q3):
        q.setflags(write=False)
    return ModeMarginals(q1=q1, q2=q2, q3=q3)


@dataclass(frozen=True)
class RelationTypeRow:
    predicate: int
    n_triples: int
    avg_out_degree: float
    avg_in_degree: float
    category: str


@dataclass(frozen=True)
class RelationTypeTable:
    """Average-degree statistics and 1/m category per directed predicate.

    Built over a reciprocal-augmented train store so that each predicate is
    directed: the reciprocal of predicate j is j + P and carries the
    transposed statistics. The category's first letter comes from the average
    in-degree (triples per distinct object), the second from the average
    out-degree (triples per distinct subject), each thresholded at ``cutoff``.
    Predicates with no triples are omitted and listed in ``missing``.
    """

    cutoff: float
    rows: dict = field(default_factory=dict)
    missing: tuple = ()

    def category(self, directed_predicate):
        return self.rows[int(directed_predicate)].category

    CATEGORIES = ("1-1", "1-m", "m-1", "m-m")


def relation_type_table(store, cutoff=1.5):
    """Degree statistics per directed predicate of an augmented train store."""
    if not store.augmented:
        raise ValueError(
            "relation_type_table expects a reciprocal-augmented store so that "
            "both orientations of every predicate are represented"
        )
    t = store.triples
    rows = {}
    missing = []
    for j in range(store.n_predicates):
        mask = t[:, 1] == j
        n = int(np.count_nonzero(mask))
        if n == 0:
            missing.append(j)
            continue
        subs = t[mask, 0]
        objs = t[mask, 2]
        avg_out = n / len(np.unique(subs))
        avg_in = n / len(np.unique(objs))
        cat = ("1" if avg_in <= cutoff else "m") + "-" + (
            "1" if avg_out <= cutoff else "m"
        )
        rows[j] = RelationTypeRow(
            predicate=j,
            n_triples=n,
            avg_out_degree=avg_out,
            avg_in_degree=avg_in,
            category=cat,
        )
    if missing:
        warnings.warn(
            f"{len(missing)} predicate(s) have no triples and were omitted "
            "from the relation-type table",
            stacklevel=2,
        )
    return RelationTypeTable(cutoff=float(cutoff), rows=rows, missing=tuple(missing))


def save_store(store, path):
    """Write a store as a compact binary cache.

    Format: magic ``KBC1``, u32 N, u32 P, u64 triple count, then count
    little-endian (u32, u32, u32) records. Augmented stores are rejected --
    the cache holds raw datasets only; augmentation is re-derived in memory.
    """
    if store.augmented:
        raise ValueError("caches hold raw stores; augment after loading instead")
    if store.n_entities >= 2**32 or store.n_predicates >= 2**32:
        raise ValueError("dimensions exceed the u32 cache format")
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<IIQ", store.n_entities, store.n_predicates, len(store)))
        fh.write(store.triples.astype("<u4").tobytes())


def load_store(path, split_tag="train"):
    """Read a binary cache written by :func:`save_store`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CACHE_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected {CACHE_MAGIC!r}")
        n_entities, n_predicates, count = struct.unpack("<IIQ", fh.read(16))
        raw = fh.read(12 * count)
        if len(raw) != 12 * count:
            raise DataError(f"{path}: truncated cache (expected {count} triples)")
    triples = np.frombuffer(raw, dtype="<u4").reshape(count, 3).astype(np.int64)
    return TripleStore(
        triples, n_entities, n_predicates, split_tag=split_tag, validate=False
    )
