import numpy as np
import pytest

from tensorkb.models import (
    GEMV_BATCH_LIMIT,
    ModelConfig,
    batch_score_lhs,
    batch_score_rhs,
    init_model,
    load_checkpoint,
    save_checkpoint,
    score_lhs_fiber,
    score_rhs_fiber,
    score_triple,
    score_triples,
)

from conftest import brute_score, make_model

VARIANTS = ("cp", "distmult", "complex")


class TestInit:
    def test_deterministic_given_seed(self):
        a = make_model("complex", 10, 4, 6, seed=3)
        b = make_model("complex", 10, 4, 6, seed=3)
        for x, y in zip(a.arrays().values(), b.arrays().values()):
            np.testing.assert_array_equal(x, y)

    def test_zero_init_scale_rejected(self):
        with pytest.raises(ValueError):
            ModelConfig(variant="cp", rank=3, init_scale=0.0)

    def test_cp_shapes(self):
        m = make_model("cp", 5, 2, 3)
        assert m.subject.shape == (5, 3)
        assert m.predicate.shape == (2, 3)
        assert m.object.shape == (5, 3)

    def test_rank_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(variant="cp", rank=0)

    def test_float32_dtype(self):
        m = make_model("cp", 5, 2, 3, dtype="float32")
        assert m.subject.dtype == np.float32


class TestScoreTriple:
    def test_cp_all_ones_closed_form(self):
        m = make_model("cp", 4, 2, 4)
        for arr in m.arrays().values():
            arr[:] = 1.0
        assert score_triple(m, 0, 0, 1) == 4.0

    def test_distmult_symmetry_bitwise(self, rng):
        """Subject/object exchange runs the identical float computation."""
        m = make_model("distmult", 15, 3, 7, seed=9)
        for _ in range(200):
            i, k = rng.integers(15, size=2)
            j = int(rng.integers(3))
            assert score_triple(m, int(i), j, int(k)) == score_triple(
                m, int(k), j, int(i)
            )

    def test_complex_hand_computed(self):
        """E[i] = 1, W[j] = 1, E[k] = i  =>  Re(1 * 1 * conj(i)) = 0."""
        m = make_model("complex", 2, 1, 1)
        m.entity_re[0, 0], m.entity_im[0, 0] = 1.0, 0.0
        m.entity_re[1, 0], m.entity_im[1, 0] = 0.0, 1.0
        m.predicate_re[0, 0], m.predicate_im[0, 0] = 1.0, 0.0
        assert score_triple(m, 0, 0, 1) == 0.0

    def test_complex_not_symmetric_generically(self, rng):
        m = make_model("complex", 10, 2, 5, seed=1)
        asymmetric = 0
        for _ in range(50):
            i, k = (int(x) for x in rng.integers(10, size=2))
            j = int(rng.integers(2))
            if i != k and abs(
                score_triple(m, i, j, k) - score_triple(m, k, j, i)
            ) > 1e-9:
                asymmetric += 1
        assert asymmetric > 0

    def test_complex_zero_imaginary_equals_distmult(self):
        mc = make_model("complex", 8, 3, 5, seed=4)
        mc.entity_im[:] = 0.0
        mc.predicate_im[:] = 0.0
        md = make_model("distmult", 8, 3, 5, seed=0)
        md.entity[:] = mc.entity_re
        md.predicate[:] = mc.predicate_re
        for i in range(8):
            for j in range(3):
                np.testing.assert_array_equal(
                    mc.rhs_fiber(i, j), md.rhs_fiber(i, j)
                )

    def test_matches_brute_force(self, rng):
        for variant in VARIANTS:
            m = make_model(variant, 9, 3, 6, seed=2)
            for _ in range(50):
                i, k = (int(x) for x in rng.integers(9, size=2))
                j = int(rng.integers(3))
                assert score_triple(m, i, j, k) == pytest.approx(
                    brute_score(m, i, j, k), rel=1e-12, abs=1e-15
                )

    def test_cp_multilinearity_power_of_two_exact(self):
        m = make_model("cp", 6, 2, 4, seed=5)
        base = [score_triple(m, 2, 1, k) for k in range(6)]
        m.subject[2] *= 2.0
        for k in range(6):
            assert score_triple(m, 2, 1, k) == 2.0 * base[k]

    def test_index_out_of_range(self):
        m = make_model("cp", 4, 2, 3)
        with pytest.raises(IndexError):
            score_triple(m, 4, 0, 0)
        with pytest.raises(IndexError):
            score_triple(m, 0, 2, 0)


class TestFibers:
    def test_rhs_fiber_matches_per_triple_scores(self, rng):
        """Fiber entries equal independent per-triple scores.

        The fiber uses one matrix-vector product, score_triple an O(R) dot;
        BLAS kernels differ in reduction order, so equality holds to a few
        ulps rather than bitwise.
        """
        for variant in VARIANTS:
            m = make_model(variant, 50, 3, 8, seed=6)
            for j in range(3):
                fiber = score_rhs_fiber(m, 7, j)
                singles = np.array([score_triple(m, 7, j, k) for k in range(50)])
                np.testing.assert_allclose(fiber, singles, rtol=1e-13, atol=1e-15)

    def test_lhs_fiber_matches_per_triple_scores(self, rng):
        for variant in VARIANTS:
            m = make_model(variant, 50, 3, 8, seed=6)
            fiber = score_lhs_fiber(m, 1, 11)
            singles = np.array([score_triple(m, i, 1, 11) for i in range(50)])
            np.testing.assert_allclose(fiber, singles, rtol=1e-13, atol=1e-15)

    def test_zero_model_zero_fibers(self):
        m = make_model("complex", 10, 2, 4)
        for arr in m.arrays().values():
            arr[:] = 0.0
        np.testing.assert_array_equal(m.rhs_fiber(0, 0), np.zeros(10))
        np.testing.assert_array_equal(m.lhs_fiber(0, 0), np.zeros(10))

    def test_cp_rank_one_scalar_factorization(self):
        m = make_model("cp", 7, 2, 1, seed=8)
        m.subject[3, 0] = 2.0
        m.predicate[1, 0] = 3.0
        np.testing.assert_array_equal(m.rhs_fiber(3, 1), 6.0 * m.object[:, 0])

    def test_distmult_fiber_level_symmetry_bitwise(self, rng):
        """rhs fiber of (i, j) and lhs fiber of (j, i) are identical arrays:
        the same profile feeds the same kernel."""
        m = make_model("distmult", 30, 4, 6, seed=7)
        for _ in range(30):
            i = int(rng.integers(30))
            j = int(rng.integers(4))
            np.testing.assert_array_equal(m.rhs_fiber(i, j), m.lhs_fiber(j, i))


class TestBatchScoring:
    def test_batch_equals_single_fibers_bitwise(self, rng):
        """Batches within the row-kernel limit are bitwise identical to
        single-fiber calls."""
        for variant in VARIANTS:
            m = make_model(variant, 100, 5, 8, seed=10)
            pairs = np.stack(
                (rng.integers(100, size=32), rng.integers(5, size=32)), axis=1
            )
            batch = batch_score_rhs(m, pairs)
            for b, (i, j) in enumerate(pairs):
                np.testing.assert_array_equal(
                    batch[b], m.rhs_fiber(int(i), int(j))
                )

    def test_large_batch_close_to_single_fibers(self, rng):
        """Above the limit the blocked matrix-matrix kernel may differ by
        ulps only."""
        m = make_model("complex", 60, 4, 8, seed=11)
        n = GEMV_BATCH_LIMIT + 40
        pairs = np.stack(
            (rng.integers(60, size=n), rng.integers(4, size=n)), axis=1
        )
        batch = m.batch_rhs(pairs)
        for b in range(0, n, 7):
            np.testing.assert_allclose(
                batch[b],
                m.rhs_fiber(int(pairs[b, 0]), int(pairs[b, 1])),
                rtol=1e-13,
                atol=1e-16,
            )

    def test_batch_of_one(self):
        m = make_model("cp", 20, 3, 4, seed=12)
        np.testing.assert_array_equal(
            batch_score_rhs(m, [(3, 1)])[0], m.rhs_fiber(3, 1)
        )

    def test_batch_lhs_equals_single_fibers_bitwise(self, rng):
        for variant in VARIANTS:
            m = make_model(variant, 40, 4, 6, seed=16)
            pairs = np.stack(
                (rng.integers(4, size=20), rng.integers(40, size=20)), axis=1
            )
            batch = batch_score_lhs(m, pairs)
            for b, (j, k) in enumerate(pairs):
                np.testing.assert_array_equal(
                    batch[b], m.lhs_fiber(int(j), int(k))
                )

    def test_duplicate_pairs_identical_rows(self, rng):
        m = make_model("distmult", 20, 3, 4, seed=13)
        batch = m.batch_rhs([(5, 2), (5, 2), (1, 0)])
        np.testing.assert_array_equal(batch[0], batch[1])

    def test_score_triples_vectorized(self, rng):
        for variant in VARIANTS:
            m = make_model(variant, 15, 3, 5, seed=14)
            triples = np.stack(
                (
                    rng.integers(15, size=40),
                    rng.integers(3, size=40),
                    rng.integers(15, size=40),
                ),
                axis=1,
            )
            vec = score_triples(m, triples)
            singles = [score_triple(m, *map(int, t)) for t in triples]
            np.testing.assert_allclose(vec, singles, rtol=1e-12)


class TestCheckpoint:
    def test_roundtrip_bitwise(self, tmp_path):
        for variant in VARIANTS:
            m = make_model(variant, 12, 4, 6, seed=15)
            path = tmp_path / f"{variant}.kbm"
            save_checkpoint(m, path, metadata={"note": "test"})
            loaded, metadata = load_checkpoint(path)
            assert metadata == {"note": "test"}
            assert loaded.variant == m.variant
            for a, b in zip(m.arrays().values(), loaded.arrays().values()):
                np.testing.assert_array_equal(a, b)

    def test_float32_roundtrip(self, tmp_path):
        m = make_model("complex", 6, 2, 3, dtype="float32")
        path = tmp_path / "f32.kbm"
        save_checkpoint(m, path)
        loaded, _ = load_checkpoint(path)
        assert loaded.dtype == np.float32
        np.testing.assert_array_equal(loaded.entity_re, m.entity_re)

    def test_sidecar_written(self, tmp_path):
        m = make_model("cp", 5, 2, 3)
        path = tmp_path / "m.kbm"
        save_checkpoint(m, path, metadata={"config": {"rank": 3}})
        assert (tmp_path / "m.kbm.json").exists()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.kbm"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(ValueError):
            load_checkpoint(path)
