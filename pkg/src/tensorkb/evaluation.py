"""Filtered ranking metrics: MRR, Hits@k and per-relation-type breakdowns.

Each evaluated triple (i, j, k) produces two queries: the rhs query
(i, j, ?) with answer k and the lhs query (?, j, k) with answer i. Candidate
answers that are known-true completions of the same query (from the filter
index) are removed before ranking; the rank of the answer is one plus the
number of surviving candidates with strictly greater score, so exact ties
rank optimistically.

In the reciprocal setting a lhs query (?, j, k) is rewritten as the rhs
query (k, j + P, ?) against the reciprocal predicate; in the standard
setting it is scored with the subject-mode fiber. Filter completions are
keyed by (anchor, directed predicate) in both settings, with lhs completions
stored under predicate j + P.

Caution: a model scoring every candidate identically (an all-zero model)
degenerately ranks everything at 1 under the strict-greater convention and
reports MRR 1.0. Sanity checks should perturb parameters at random.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._validation import check_choice, check_index
from .datasets import FilterIndex, RelationTypeTable, TripleStore

MODES = ("standard", "reciprocal")

# Chunk size for batched fiber scoring during evaluation.
EVAL_CHUNK = 512


@dataclass(frozen=True)
class Query:
    """One link-prediction query: rank ``target`` among completions."""

    direction: str  # "rhs" ranks objects of (anchor, predicate, ?),
    # "lhs" ranks subjects of (?, predicate, anchor)
    anchor: int
    predicate: int  # raw predicate index (directed form derived internally)
    target: int

    def __post_init__(self):
        check_choice(self.direction, "direction", ("rhs", "lhs"))


@dataclass(frozen=True)
class EvalResult:
    """Filtered ranking metrics over a set of queries."""

    mrr: float
    hits1: float
    hits3: float
    hits10: float
    n_queries: int
    breakdown: Optional[dict] = None

    def to_dict(self):
        out = {
            "mrr": self.mrr,
            "hits1": self.hits1,
            "hits3": self.hits3,
            "hits10": self.hits10,
            "n_queries": self.n_queries,
        }
        if self.breakdown is not None:
            out["breakdown"] = {
                cat: {"mrr": mrr, "n_queries": n}
                for cat, (mrr, n) in self.breakdown.items()
            }
        return out

    def table(self):
        lines = [
            f"{'metric':<10}{'value':>12}",
            f"{'mrr':<10}{self.mrr:>12.4f}",
            f"{'hits@1':<10}{self.hits1:>12.4f}",
            f"{'hits@3':<10}{self.hits3:>12.4f}",
            f"{'hits@10':<10}{self.hits10:>12.4f}",
            f"{'queries':<10}{self.n_queries:>12d}",
        ]
        if self.breakdown is not None:
            lines.append("")
            lines.append(f"{'category':<10}{'mrr':>12}{'queries':>10}")
            for cat in RelationTypeTable.CATEGORIES:
                if cat in self.breakdown:
                    mrr, n = self.breakdown[cat]
                    lines.append(f"{cat:<10}{mrr:>12.4f}{n:>10d}")
        return "\n".join(lines)


def rank_from_scores(scores, target, filtered):
    """Optimistic filtered rank of ``target`` within a score fiber.

    rank = 1 + #{candidate c : c not in filtered, c != target,
                 scores[c] > scores[target]}.

    ``filtered`` may include the target itself; it contributes nothing to the
    strict-greater count either way. Removing an entry from ``filtered`` can
    only increase or preserve the rank.
    """
    t = scores[target]
    higher = int(np.count_nonzero(scores > t))
    filtered = np.asarray(filtered, dtype=np.int64)
    if filtered.size:
        higher -= int(np.count_nonzero(scores[filtered] > t))
    return 1 + higher


def _directed_predicate(query, n_raw_predicates):
    if query.direction == "rhs":
        return query.predicate
    return query.predicate + n_raw_predicates


def filtered_rank(model, query, filter_index, mode="reciprocal", filtered=True):
    """Filtered rank of a single query under the given formulation."""
    check_choice(mode, "mode", MODES)
    if filter_index.n_directed_predicates % 2:
        raise ValueError(
            "filter index must cover both orientations (build with "
            "reciprocal=True)"
        )
    n_raw = filter_index.n_directed_predicates // 2
    check_index(query.predicate, "predicate", n_raw)
    check_index(query.anchor, "anchor", model.n_entities)
    check_index(query.target, "target", model.n_entities)

    if query.direction == "rhs":
        scores = model.rhs_fiber(query.anchor, query.predicate)
    elif mode == "reciprocal":
        scores = model.rhs_fiber(query.anchor, query.predicate + n_raw)
    else:
        scores = model.lhs_fiber(query.predicate, query.anchor)

    known = (
        filter_index.completions(query.anchor, _directed_predicate(query, n_raw))
        if filtered
        else np.empty(0, dtype=np.int64)
    )
    return rank_from_scores(scores, query.target, known)


def _ranks_for_queries(model, anchors, dirpreds, targets, filter_index, mode,
                       n_raw, direction, filtered):
    """Ranks for a homogeneous array of queries, chunked through the batched
    scorer.

    Queries are processed in (anchor, predicate) order and each distinct
    pair within a chunk is scored once, so queries sharing a fiber reuse
    its computation. Ranks are returned in the original query order.
    """
    n = len(anchors)
    ranks = np.empty(n, dtype=np.int64)
    order = np.lexsort((dirpreds, anchors))
    for lo in range(0, n, EVAL_CHUNK):
        sel = order[lo:lo + EVAL_CHUNK]
        pairs = np.stack((anchors[sel], dirpreds[sel]), axis=1)
        uniq, inverse = np.unique(pairs, axis=0, return_inverse=True)
        if direction == "rhs" or mode == "reciprocal":
            scores = model.batch_rhs(uniq)
        else:
            scores = model.batch_lhs(
                np.stack((uniq[:, 1] - n_raw, uniq[:, 0]), axis=1)
            )
        for row, q in enumerate(sel):
            known = (
                filter_index.completions(anchors[q], dirpreds[q])
                if filtered
                else ()
            )
            ranks[q] = rank_from_scores(scores[inverse[row]], targets[q], known)
    return ranks


def evaluate(model, store, filter_index, mode="reciprocal", type_table=None,
             filtered=True):
    """Filtered MRR and Hits@{1,3,10} over both query orientations of a store.

    ``store`` holds raw (non-augmented) triples; the two orientations per
    triple are derived here. ``filter_index`` must cover both orientations
    (built with ``reciprocal=True``) over every split whose completions are
    known true. Passing a :class:`RelationTypeTable` adds a per-category MRR
    breakdown, attributing each directed query to its directed predicate.
    ``filtered=False`` computes the raw (unfiltered) variant of the metrics.
    """
    check_choice(mode, "mode", MODES)
    if not isinstance(store, TripleStore) or store.augmented:
        raise ValueError("evaluate expects a raw (non-augmented) triple store")
    if len(store) == 0:
        raise ValueError("cannot evaluate an empty store")
    if not isinstance(filter_index, FilterIndex):
        raise TypeError("filter_index must be a FilterIndex")
    n_raw = store.n_predicates
    if filter_index.n_directed_predicates != 2 * n_raw:
        raise ValueError(
            "filter index must be built with reciprocal=True so both query "
            "orientations can be filtered"
        )
    expected_p = 2 * n_raw if mode == "reciprocal" else n_raw
    if model.n_predicates != expected_p:
        raise ValueError(
            f"model has {model.n_predicates} predicates but mode={mode!r} "
            f"over this store requires {expected_p}"
        )
    if model.n_entities != store.n_entities:
        raise ValueError("model/store entity-count mismatch")

    t = store.triples
    rhs_ranks = _ranks_for_queries(
        model, t[:, 0], t[:, 1], t[:, 2], filter_index, mode, n_raw, "rhs",
        filtered,
    )
    lhs_ranks = _ranks_for_queries(
        model, t[:, 2], t[:, 1] + n_raw, t[:, 0], filter_index, mode, n_raw,
        "lhs", filtered,
    )

    n_queries = 2 * len(t)
    # Fixed reduction tree: each orientation is reduced separately, then the
    # two partial sums are combined, so swapping orientations cannot change
    # the float result.
    mrr = (
        float(np.sum(1.0 / rhs_ranks)) + float(np.sum(1.0 / lhs_ranks))
    ) / n_queries

    def hits(at):
        return (
            int(np.count_nonzero(rhs_ranks <= at))
            + int(np.count_nonzero(lhs_ranks <= at))
        ) / n_queries

    breakdown = None
    if type_table is not None:
        needed = set(t[:, 1].tolist()) | {int(j) + n_raw for j in set(t[:, 1].tolist())}
        absent = sorted(needed - set(type_table.rows))
        if absent:
            raise ValueError(
                f"relation-type table lacks directed predicate(s) {absent}; "
                "build it over a train store covering every evaluated "
                "predicate"
            )
        breakdown = {}
        cats_rhs = np.array(
            [type_table.rows[int(j)].category for j in t[:, 1]]
        )
        cats_lhs = np.array(
            [type_table.rows[int(j) + n_raw].category for j in t[:, 1]]
        )
        all_cats = np.concatenate((cats_rhs, cats_lhs))
        all_ranks = np.concatenate((rhs_ranks, lhs_ranks))
        for cat in RelationTypeTable.CATEGORIES:
            mask = all_cats == cat
            n = int(np.count_nonzero(mask))
            if n:
                breakdown[cat] = (float(np.sum(1.0 / all_ranks[mask])) / n, n)

    return EvalResult(
        mrr=mrr,
        hits1=hits(1),
        hits3=hits(3),
        hits10=hits(10),
        n_queries=n_queries,
        breakdown=breakdown,
    )


def per_type_breakdown(model, store, filter_index, type_table,
                       mode="reciprocal"):
    """Per relation-category filtered MRR: category -> (mrr, n_queries)."""
    if not isinstance(type_table, RelationTypeTable):
        raise TypeError("type_table must be a RelationTypeTable")
    result = evaluate(model, store, filter_index, mode=mode, type_table=type_table)
    return result.breakdown
