import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hashnets.errors import InvalidInputError
from hashnets.linalg import Rng
from hashnets.sketch import (
    SketchMatrix,
    SubspaceBasis,
    count_sketch_new,
    distortion,
    identity_sketch,
    random_basis,
    sketch_apply,
    sketch_apply_matrix,
    sketch_apply_transpose,
    sparse_embedding_new,
    suggest_sketch_rows,
)


class TestConstruction:
    def test_count_sketch_structure(self):
        S = count_sketch_new(16, 300, Rng(0))
        D = S.dense()
        assert np.all(np.count_nonzero(D, axis=0) == 1)
        np.testing.assert_array_equal(np.abs(D).sum(axis=0), np.ones(300))

    def test_count_sketch_deterministic(self):
        a, b = count_sketch_new(16, 300, Rng(5)), count_sketch_new(16, 300, Rng(5))
        np.testing.assert_array_equal(a.rows, b.rows)
        np.testing.assert_array_equal(a.values, b.values)

    def test_single_row_is_signed_sum(self):
        S = count_sketch_new(1, 10, Rng(2))
        x = np.arange(1.0, 11.0)
        assert sketch_apply(S, x)[0] == pytest.approx(float(S.values[:, 0] @ x))
        assert set(np.abs(S.values[:, 0]).tolist()) == {1.0}

    def test_sparse_embedding_t1_like_count_sketch(self):
        S = sparse_embedding_new(8, 100, 1, Rng(1))
        assert S.rows.shape == (100, 1)
        np.testing.assert_array_equal(np.abs(S.values), np.ones((100, 1)))

    def test_sparse_embedding_t2(self):
        S = sparse_embedding_new(4, 50, 2, Rng(3))
        D = S.dense()
        assert np.all(np.count_nonzero(D, axis=0) == 2)
        np.testing.assert_allclose(np.abs(D[D != 0]), 1 / math.sqrt(2))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 40), st.integers(1, 60), st.data())
    def test_sparse_embedding_distinct_rows_unit_columns(self, s, n, data):
        t = data.draw(st.integers(1, s))
        S = sparse_embedding_new(s, n, t, Rng(data.draw(st.integers(0, 10**6))))
        assert all(len(set(r)) == t for r in S.rows.tolist())
        np.testing.assert_allclose((S.dense() ** 2).sum(axis=0), np.ones(n), rtol=1e-14)

    def test_t_larger_than_s_rejected(self):
        with pytest.raises(InvalidInputError):
            sparse_embedding_new(3, 10, 4, Rng(0))

    def test_partial_fisher_yates_is_uniform(self):
        # every row should be hit about equally often across columns
        S = sparse_embedding_new(10, 20000, 3, Rng(4))
        counts = np.bincount(S.rows.ravel(), minlength=10)
        assert np.all(np.abs(counts - 6000) < 5 * math.sqrt(6000))

    def test_identity(self):
        np.testing.assert_array_equal(identity_sketch(5).dense(), np.eye(5))


class TestApply:
    def test_hand_example(self):
        S = SketchMatrix.count_sketch([1, 0, 0, 1], [1, -1, 1, -1], 2)
        np.testing.assert_array_equal(sketch_apply(S, np.ones(4)), [0.0, 0.0])
        np.testing.assert_array_equal(sketch_apply(S, [1.0, 2.0, 3.0, 4.0]), [-2 + 3, 1 - 4])

    def test_zero(self):
        S = count_sketch_new(8, 20, Rng(0))
        np.testing.assert_array_equal(sketch_apply(S, np.zeros(20)), np.zeros(8))
        np.testing.assert_array_equal(sketch_apply_matrix(S, np.zeros((20, 3))), np.zeros((8, 3)))

    def test_identity_returns_input(self):
        U = np.random.default_rng(0).standard_normal((6, 2))
        np.testing.assert_array_equal(sketch_apply_matrix(identity_sketch(6), U), U)

    def test_columns_match_vector_apply(self):
        S = sparse_embedding_new(7, 30, 3, Rng(1))
        U = np.random.default_rng(1).standard_normal((30, 4))
        SU = sketch_apply_matrix(S, U)
        for j in range(4):
            np.testing.assert_array_equal(SU[:, j], sketch_apply(S, U[:, j]))

    def test_matches_dense_and_transpose(self):
        S = sparse_embedding_new(9, 40, 2, Rng(2))
        x = np.random.default_rng(2).standard_normal(40)
        y = np.random.default_rng(3).standard_normal(9)
        np.testing.assert_allclose(sketch_apply(S, x), S.dense() @ x, atol=1e-13)
        np.testing.assert_allclose(sketch_apply_transpose(S, y), S.dense().T @ y, atol=1e-13)

    def test_gram_symmetric(self):
        D = count_sketch_new(10, 64, Rng(3)).dense()
        G = D.T @ D
        np.testing.assert_array_equal(G, G.T)

    def test_dimension_mismatch(self):
        S = count_sketch_new(4, 10, Rng(0))
        with pytest.raises(InvalidInputError):
            sketch_apply(S, np.ones(9))
        with pytest.raises(InvalidInputError):
            sketch_apply_transpose(S, np.ones(5))

    @pytest.mark.parametrize("kind", ["count-sketch", "sparse-embedding"])
    def test_isometry_in_expectation(self, kind):
        x = np.random.default_rng(0).standard_normal(40)
        norms = []
        for seed in range(10**4):
            if kind == "count-sketch":
                S = count_sketch_new(10, 40, Rng(seed))
            else:
                S = sparse_embedding_new(10, 40, 3, Rng(seed))
            norms.append(np.sum(sketch_apply(S, x) ** 2))
        assert abs(np.mean(norms) / np.sum(x**2) - 1) <= 0.05


class TestDistortion:
    def test_basis_validation(self):
        with pytest.raises(InvalidInputError):
            SubspaceBasis(np.ones((4, 2)))

    def test_random_basis_orthonormal(self):
        B = random_basis(50, 6, Rng(0))
        np.testing.assert_allclose(B.U.T @ B.U, np.eye(6), atol=1e-12)

    def test_identity_is_exact(self):
        d = distortion(identity_sketch(30), random_basis(30, 4, Rng(0)), 500, Rng(1))
        assert (d.norm, d.inner) == (0.0, 0.0)

    def test_single_direction(self):
        u = np.zeros(20)
        u[3] = 1.0
        S = count_sketch_new(5, 20, Rng(7))
        d = distortion(S, SubspaceBasis(u[:, None]), 10, Rng(0))
        assert d.norm == pytest.approx(abs(np.sum(sketch_apply(S, u) ** 2) - 1), abs=1e-15)

    def test_sampled_within_exact(self):
        S = count_sketch_new(40, 500, Rng(2))
        d = distortion(S, random_basis(500, 5, Rng(3)), 2000, Rng(4))
        assert d.norm <= d.exact + 1e-12 and d.inner <= d.exact + 1e-12

    def test_matches_direct_computation(self):
        S = sparse_embedding_new(30, 200, 2, Rng(5))
        basis = random_basis(200, 3, Rng(6))
        d = distortion(S, basis, 50, Rng(7))
        # independent re-derivation through explicit vectors
        gen = Rng(7).generator()
        Z = gen.standard_normal((50, 3))
        Z /= np.linalg.norm(Z, axis=1, keepdims=True)
        X = Z @ basis.U.T
        SX = np.stack([S.dense() @ x for x in X])
        norm = np.max(np.abs(np.sum(SX**2, axis=1) - 1))
        inner = np.max(np.abs(np.sum(SX * np.roll(SX, -1, 0), 1) - np.sum(X * np.roll(X, -1, 0), 1)))
        assert d.norm == pytest.approx(norm, abs=1e-12)
        assert d.inner == pytest.approx(inner, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            distortion(count_sketch_new(4, 10, Rng(0)), random_basis(11, 2, Rng(0)), 5, Rng(0))

    def test_median_non_increasing_in_rows(self):
        n, d = 2048, 4
        medians = []
        for s in (64, 128, 256, 512, 1024):
            vals = [
                distortion(count_sketch_new(s, n, Rng(seed)), random_basis(n, d, Rng(100 + seed)), 2000,
                           Rng(200 + seed)).norm
                for seed in range(20)
            ]
            medians.append(np.median(vals))
        assert all(b <= a for a, b in zip(medians, medians[1:]))


class TestSuggestRows:
    def test_decided_value(self):
        assert suggest_sketch_rows("count-sketch", 5, 0.25, 0.1) == 4000

    def test_eps_halved_quadruples(self):
        a = suggest_sketch_rows("count-sketch", 3, 0.2, 0.5)
        b = suggest_sketch_rows("count-sketch", 3, 0.1, 0.5)
        assert b == 4 * a

    def test_sparse_embedding_formula(self):
        want = math.ceil(10 * math.log(10 / (0.5 * 0.5)) ** 2 / 0.25)
        assert suggest_sketch_rows("sparse-embedding", 10, 0.5, 0.5) == want

    def test_sparse_embedding_grows_with_d(self):
        vals = [suggest_sketch_rows("sparse-embedding", d, 0.3, 0.2) for d in (2, 4, 8, 16)]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_constant(self):
        assert suggest_sketch_rows("count-sketch", 5, 0.25, 0.1, c=2) == 8000

    def test_invalid(self):
        with pytest.raises(InvalidInputError):
            suggest_sketch_rows("count-sketch", 5, 1.5, 0.1)
        with pytest.raises(InvalidInputError):
            suggest_sketch_rows("identity", 5, 0.5, 0.1)
