import numpy as np
import pytest

from tensorkb.datasets import (
    DuplicateTripleError,
    FilterIndex,
    TripleParseError,
    TripleStore,
    UnknownTokenError,
    Vocabulary,
    augment_reciprocal,
    build_filter_index,
    compute_marginals,
    load_store,
    load_triples,
    relation_type_table,
    save_store,
)

from conftest import random_store


class TestLoadTriples:
    def test_toy_file_first_appearance_order(self, tmp_path):
        path = tmp_path / "toy.tsv"
        path.write_text("a\tlikes\tb\nb\tlikes\ta\na\tlikes\ta\n")
        store, (ents, preds) = load_triples(path)
        assert store.n_entities == 2
        assert store.n_predicates == 1
        assert store.triples.tolist() == [[0, 0, 1], [1, 0, 0], [0, 0, 0]]
        assert ents.tokens() == ["a", "b"]
        assert preds.tokens() == ["likes"]

    def test_empty_file_with_fixed_vocab(self, tmp_path):
        vocab = (Vocabulary(["a", "b", "c"]), Vocabulary(["r0", "r1"]))
        path = tmp_path / "empty.tsv"
        path.write_text("")
        store, returned = load_triples(path, vocab=vocab)
        assert len(store) == 0
        assert store.n_entities == 3
        assert store.n_predicates == 2
        assert returned[0] is vocab[0] and returned[1] is vocab[1]

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("a\tr\tb\na\tr\n")
        with pytest.raises(TripleParseError) as err:
            load_triples(path)
        assert err.value.line_number == 2

    def test_unknown_token_under_fixed_vocab(self, tmp_path):
        vocab = (Vocabulary(["a"]), Vocabulary(["r"]))
        path = tmp_path / "unk.tsv"
        path.write_text("a\tr\tzzz\n")
        with pytest.raises(UnknownTokenError) as err:
            load_triples(path, vocab=vocab)
        assert err.value.token == "zzz"
        assert err.value.line_number == 1

    def test_duplicate_triples_rejected(self):
        with pytest.raises(DuplicateTripleError):
            TripleStore([[0, 0, 1], [0, 0, 1]], 2, 1)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            TripleStore([[0, 0, 5]], 2, 1)


class TestAugmentReciprocal:
    def test_definition_single_triple(self):
        store = TripleStore([[0, 0, 1]], 2, 1)
        aug = augment_reciprocal(store)
        assert aug.n_predicates == 2
        assert aug.triples.tolist() == [[0, 0, 1], [1, 1, 0]]
        assert aug.augmented

    def test_counts_double(self, rng):
        store = random_store(rng, 30, 4, 100)
        aug = augment_reciprocal(store)
        assert len(aug) == 2 * len(store)
        assert aug.n_predicates == 2 * store.n_predicates

    def test_double_augmentation_rejected(self):
        store = TripleStore([[0, 0, 1]], 2, 1)
        with pytest.raises(ValueError):
            augment_reciprocal(augment_reciprocal(store))

    def test_involution_on_raw_triples(self, rng):
        """Re-flipping the reciprocal images recovers the original triples."""
        store = random_store(rng, 20, 3, 60)
        aug = augment_reciprocal(store)
        flipped = aug.triples[1::2]
        recovered = np.stack(
            (flipped[:, 2], flipped[:, 1] - store.n_predicates, flipped[:, 0]),
            axis=1,
        )
        np.testing.assert_array_equal(recovered, store.triples)

    def test_reciprocal_predicates_are_transposed_slices(self, rng):
        store = random_store(rng, 15, 3, 50)
        aug = augment_reciprocal(store)
        p = store.n_predicates
        for j in range(p):
            fwd = {(int(a), int(b)) for a, _, b in store.triples[store.triples[:, 1] == j]}
            rev = {(int(a), int(b)) for a, _, b in aug.triples[aug.triples[:, 1] == j + p]}
            assert rev == {(b, a) for a, b in fwd}


class TestFilterIndex:
    def test_single_store_definition(self):
        store = TripleStore([[0, 0, 1], [0, 0, 2]], 3, 1)
        fi = build_filter_index([store])
        assert fi.completions(0, 0).tolist() == [1, 2]
        assert fi.completions(1, 0).tolist() == []

    def test_union_of_disjoint_stores(self):
        a = TripleStore([[0, 0, 1]], 3, 1, split_tag="train")
        b = TripleStore([[0, 0, 2]], 3, 1, split_tag="test")
        fi = build_filter_index([a, b])
        assert fi.completions(0, 0).tolist() == [1, 2]

    def test_reciprocal_entries(self):
        store = TripleStore([[0, 0, 1]], 2, 1)
        fi = build_filter_index([store], reciprocal=True)
        assert fi.completions(0, 0).tolist() == [1]
        assert fi.completions(1, 1).tolist() == [0]

    def test_dimension_mismatch(self):
        a = TripleStore([[0, 0, 1]], 2, 1)
        b = TripleStore([[0, 0, 1]], 3, 1)
        with pytest.raises(ValueError):
            build_filter_index([a, b])

    def test_matches_brute_force_scan(self, rng):
        """1000 random lookups equal explicit scans of the stores."""
        stores = [
            random_store(rng, 25, 4, 120, split_tag="train"),
            random_store(rng, 25, 4, 40, split_tag="test"),
        ]
        fi = build_filter_index(stores, reciprocal=True)
        all_triples = np.concatenate([s.triples for s in stores])
        p = stores[0].n_predicates
        for _ in range(1000):
            anchor = int(rng.integers(25))
            dirpred = int(rng.integers(2 * p))
            if dirpred < p:
                mask = (all_triples[:, 0] == anchor) & (all_triples[:, 1] == dirpred)
                expected = sorted(set(all_triples[mask, 2].tolist()))
            else:
                mask = (all_triples[:, 2] == anchor) & (
                    all_triples[:, 1] == dirpred - p
                )
                expected = sorted(set(all_triples[mask, 0].tolist()))
            assert fi.completions(anchor, dirpred).tolist() == expected

    def test_augmented_store_equals_reciprocal_flag(self, rng):
        """Indexing an augmented store plainly equals indexing the raw store
        with reciprocal=True."""
        store = random_store(rng, 20, 3, 80)
        fi_raw = build_filter_index([store], reciprocal=True)
        fi_aug = build_filter_index([augment_reciprocal(store)])
        assert len(fi_raw) == len(fi_aug)
        for anchor in range(20):
            for dirpred in range(6):
                np.testing.assert_array_equal(
                    fi_raw.completions(anchor, dirpred),
                    fi_aug.completions(anchor, dirpred),
                )

    def test_save_load_roundtrip(self, rng, tmp_path):
        store = random_store(rng, 20, 3, 80)
        fi = build_filter_index([store], reciprocal=True)
        fi.save(tmp_path / "filter.npz")
        loaded = FilterIndex.load(tmp_path / "filter.npz")
        assert loaded.n_entities == fi.n_entities
        assert loaded.n_directed_predicates == fi.n_directed_predicates
        for anchor in range(20):
            for dirpred in range(6):
                np.testing.assert_array_equal(
                    loaded.completions(anchor, dirpred),
                    fi.completions(anchor, dirpred),
                )


class TestMarginals:
    def test_counting_example(self):
        store = TripleStore([[0, 0, 1], [1, 0, 1]], 2, 1)
        m = compute_marginals(store)
        assert m.q1.tolist() == [0.5, 0.5]
        assert m.q2.tolist() == [1.0]
        assert m.q3.tolist() == [0.0, 1.0]

    def test_single_triple_indicator(self):
        store = TripleStore([[2, 1, 0]], 3, 2)
        m = compute_marginals(store)
        assert m.q1.tolist() == [0.0, 0.0, 1.0]
        assert m.q2.tolist() == [0.0, 1.0]
        assert m.q3.tolist() == [1.0, 0.0, 0.0]

    def test_uniform_synthetic_store(self):
        n, p = 4, 2
        triples = [(i, j, k) for i in range(n) for j in range(p) for k in range(n)]
        store = TripleStore(triples, n, p)
        m = compute_marginals(store)
        np.testing.assert_allclose(m.q1, 1 / n)
        np.testing.assert_allclose(m.q2, 1 / p)
        np.testing.assert_allclose(m.q3, 1 / n)

    def test_sums_to_one(self, rng):
        store = random_store(rng, 50, 5, 300)
        m = compute_marginals(store)
        for q in (m.q1, m.q2, m.q3):
            assert abs(q.sum() - 1.0) < 1e-12
            assert q.min() >= 0.0

    def test_empty_store_rejected(self):
        store = TripleStore(np.empty((0, 3), dtype=np.int64), 3, 1)
        with pytest.raises(ValueError):
            compute_marginals(store)


class TestRelationTypeTable:
    def test_bijective_predicate_is_one_one(self):
        triples = [(i, 0, i + 10) for i in range(10)]
        store = augment_reciprocal(TripleStore(triples, 20, 1))
        table = relation_type_table(store, cutoff=1.5)
        assert table.category(0) == "1-1"
        assert table.category(1) == "1-1"

    def test_fan_out_predicate(self):
        """One subject with ten objects: in-degree 1, out-degree 10."""
        triples = [(0, 0, k + 1) for k in range(10)]
        store = augment_reciprocal(TripleStore(triples, 11, 1))
        table = relation_type_table(store, cutoff=1.5)
        assert table.rows[0].avg_out_degree == 10.0
        assert table.rows[0].avg_in_degree == 1.0
        assert table.category(0) == "1-m"
        # reciprocal orientation transposes the degrees
        assert table.category(1) == "m-1"

    def test_raw_store_rejected(self):
        store = TripleStore([[0, 0, 1]], 2, 1)
        with pytest.raises(ValueError):
            relation_type_table(store)

    def test_missing_predicates_reported(self):
        triples = [(0, 0, 1)]
        store = TripleStore(triples, 2, 2)  # predicate 1 unused
        aug = augment_reciprocal(store)
        with pytest.warns(UserWarning):
            table = relation_type_table(aug)
        assert set(table.missing) == {1, 3}
        assert set(table.rows) == {0, 2}


class TestCache:
    def test_roundtrip(self, rng, tmp_path):
        store = random_store(rng, 30, 4, 100)
        path = tmp_path / "train.kbc"
        save_store(store, path)
        loaded = load_store(path)
        np.testing.assert_array_equal(loaded.triples, store.triples)
        assert loaded.n_entities == store.n_entities
        assert loaded.n_predicates == store.n_predicates

    def test_header_layout(self, tmp_path):
        store = TripleStore([[0, 0, 1], [1, 0, 0]], 2, 1)
        path = tmp_path / "t.kbc"
        save_store(store, path)
        raw = path.read_bytes()
        assert raw[:4] == b"KBC1"
        assert int.from_bytes(raw[4:8], "little") == 2  # N
        assert int.from_bytes(raw[8:12], "little") == 1  # P
        assert int.from_bytes(raw[12:20], "little") == 2  # count
        assert len(raw) == 20 + 2 * 12

    def test_augmented_store_rejected(self):
        aug = augment_reciprocal(TripleStore([[0, 0, 1]], 2, 1))
        with pytest.raises(ValueError):
            save_store(aug, "/tmp/nope.kbc")

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.kbc"
        path.write_bytes(b"XXXX" + b"\x00" * 16)
        with pytest.raises(Exception):
            load_store(path)


class TestVocabulary:
    def test_bijection_and_order(self):
        v = Vocabulary()
        assert v.add("x") == 0
        assert v.add("y") == 1
        assert v.add("x") == 0
        assert v.index("y") == 1
        assert v.token(0) == "x"
        assert len(v) == 2

    def test_save_load(self, tmp_path):
        v = Vocabulary(["alpha", "beta", "gamma"])
        v.save(tmp_path / "vocab.txt")
        w = Vocabulary.load(tmp_path / "vocab.txt")
        assert v == w
