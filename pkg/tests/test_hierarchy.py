import pytest

from tensorkb.hierarchy import (
    HierarchyParams,
    build_hierarchy_store,
    hierarchy_mrr_closed_form,
    hierarchy_mrr_simulated,
)


class TestClosedForm:
    def test_three_ary_depth_two(self):
        """n=3, d=2: K=3, mrr = (9 + 3 + 3/4 + 9) / 24 = 0.90625."""
        assert hierarchy_mrr_closed_form(HierarchyParams(3, 2)) == 0.90625

    def test_depth_one_star_is_perfect(self):
        for n in (3, 4, 7):
            assert hierarchy_mrr_closed_form(HierarchyParams(n, 1)) == 1.0

    def test_asymptotic_gap_near_half_branching(self):
        params = HierarchyParams(10, 4)
        gap = 1.0 - hierarchy_mrr_closed_form(params)
        assert abs(gap - 1 / 20) / (1 / 20) < 0.2

    def test_internal_node_count(self):
        assert HierarchyParams(3, 2).n_internal == 3
        assert HierarchyParams(10, 4).n_internal == 1110

    def test_small_branching_rejected(self):
        with pytest.raises(ValueError):
            HierarchyParams(2, 3)
        with pytest.raises(ValueError):
            HierarchyParams(3, 0)


class TestSimulation:
    @pytest.mark.parametrize("n", [3, 4, 5])
    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_simulation_matches_closed_form(self, n, d):
        params = HierarchyParams(n, d)
        sim = hierarchy_mrr_simulated(params)
        closed = hierarchy_mrr_closed_form(params)
        assert abs(sim - closed) <= 1e-12

    def test_store_is_a_tree(self):
        params = HierarchyParams(3, 2)
        store = build_hierarchy_store(params)
        assert store.n_entities == 13
        assert len(store) == 12  # nodes - 1 edges
        assert store.n_predicates == 1
        # every non-root node appears exactly once as an object
        objects = sorted(store.triples[:, 2].tolist())
        assert objects == list(range(1, 13))
