"""Filtered MRR of an idealized symmetric scorer on a single hierarchical
predicate, in closed form and by explicit simulation.

A symmetric-scoring model cannot distinguish (i, p, k) from (k, p, i), yet
on a pure n-ary tree its filtered MRR is high: ranking every tree-neighbor
of the anchor above the rest (children first, ancestor just below) answers
almost all queries at rank one, and only the one upward query per internal
node lands at rank n + 1. The closed form quantifies this; the simulation
builds the tree as a triple store and pushes every query through the
filtered-ranking machinery.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_positive_int
from .datasets import TripleStore, build_filter_index
from .evaluation import rank_from_scores


@dataclass(frozen=True)
class HierarchyParams:
    """A complete n-ary tree of the given depth; branching must exceed 2 for
    the ranked-list argument (children above ancestor) to determine ranks."""

    branching: int
    depth: int

    def __post_init__(self):
        check_positive_int(self.branching, "branching", minimum=3)
        check_positive_int(self.depth, "depth", minimum=1)

    @property
    def n_internal(self):
        """Nodes that are neither the root nor leaves: K = (n^d - n)/(n - 1)."""
        n, d = self.branching, self.depth
        return (n**d - n) // (n - 1)

    @property
    def n_nodes(self):
        n, d = self.branching, self.depth
        return (n ** (d + 1) - 1) // (n - 1)


def hierarchy_mrr_closed_form(params):
    """Exact filtered MRR of the idealized symmetric scorer on the tree.

    Per internal node, n downward queries rank 1 and the single upward query
    ranks n + 1; root and leaf queries all rank 1:

        mrr = (n^d + n + K/(n+1) + K*n) / (n^d + n + (n+1)*K),
        K = (n^d - n)/(n - 1).

    As d grows, 1 - mrr approaches 1/(2n).
    """
    if not isinstance(params, HierarchyParams):
        params = HierarchyParams(*params)
    n, d = params.branching, params.depth
    k = params.n_internal
    numerator = n**d + n + k / (n + 1) + k * n
    denominator = n**d + n + (n + 1) * k
    return numerator / denominator


def build_hierarchy_store(params):
    """The tree as a single-predicate store of (parent, 0, child) triples.

    Nodes are indexed in breadth-first order with the root at 0, so the
    parent of node v > 0 is (v - 1) // n.
    """
    if not isinstance(params, HierarchyParams):
        params = HierarchyParams(*params)
    n = params.branching
    m = params.n_nodes
    children = np.arange(1, m, dtype=np.int64)
    parents = (children - 1) // n
    triples = np.stack(
        (parents, np.zeros(m - 1, dtype=np.int64), children), axis=1
    )
    return TripleStore(triples, n_entities=m, n_predicates=1, validate=False)


def hierarchy_mrr_simulated(params):
    """Filtered MRR of the idealized scorer over all queries of the tree.

    The scorer is symmetric in the anchor's neighborhood: for anchor x it
    scores children of x at 2, the parent of x at 1 and everything else at
    0, the same fiber for both query orientations. Every triple contributes
    the queries (i, p, ?) and (?, p, i), filtered against the known triples.
    """
    if not isinstance(params, HierarchyParams):
        params = HierarchyParams(*params)
    n = params.branching
    store = build_hierarchy_store(params)
    m = store.n_entities
    filter_index = build_filter_index([store], reciprocal=True)

    def fiber(anchor):
        scores = np.zeros(m)
        first_child = anchor * n + 1
        if first_child < m:
            scores[first_child:first_child + n] = 2.0
        if anchor > 0:
            scores[(anchor - 1) // n] = 1.0
        return scores

    rhs_sum = 0.0
    lhs_sum = 0.0
    for parent, pred, child in store.triples:
        parent, child = int(parent), int(child)
        # (parent, p, ?) with answer child; other children filtered away
        rank = rank_from_scores(
            fiber(parent), child, filter_index.completions(parent, 0)
        )
        rhs_sum += 1.0 / rank
        # (?, p, child) with answer parent; scored through child's fiber
        rank = rank_from_scores(
            fiber(child), parent, filter_index.completions(child, 1)
        )
        lhs_sum += 1.0 / rank
    n_queries = 2 * len(store)
    return (rhs_sum + lhs_sum) / n_queries
