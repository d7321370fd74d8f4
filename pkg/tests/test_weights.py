import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from spatboost.errors import TopologyError
from spatboost.weights import (
    WeightMatrix,
    build_circular,
    build_knn,
    read_coordinates,
    read_weights,
    row_normalize,
    spatial_lag,
    summary,
    validate,
    write_weights,
)


class TestCircular:
    def test_ring_of_four(self):
        W = build_circular(4, 1).toarray()
        assert_array_equal(W[0], [0, 1, 0, 1])
        assert not build_circular(4, 1).row_normalized

    def test_n400_k5_degrees(self):
        W = build_circular(400, 5)
        assert_array_equal(W.degrees(), np.full(400, 10))
        assert W.nnz == 4000

    def test_complete_graph_edge_case(self):
        W = build_circular(5, 2).toarray()
        assert_array_equal(W, np.ones((5, 5)) - np.eye(5))

    def test_neighbours_are_predecessors_and_successors(self):
        W = build_circular(12, 3).toarray()
        assert_array_equal(np.flatnonzero(W[0]), [1, 2, 3, 9, 10, 11])
        assert_array_equal(np.flatnonzero(W[7]), [4, 5, 6, 8, 9, 10])

    @pytest.mark.parametrize("n,K", [(4, 2), (2, 1), (10, 5), (5, 0)])
    def test_rejects_bad_sizes(self, n, K):
        with pytest.raises(TopologyError):
            build_circular(n, K)

    @pytest.mark.parametrize("n,K", [(7, 1), (20, 3), (400, 5)])
    def test_symmetric_before_and_after_normalization(self, n, K):
        raw = build_circular(n, K).toarray()
        assert_array_equal(raw, raw.T)
        norm = row_normalize(build_circular(n, K)).toarray()
        assert_allclose(norm, norm.T, atol=0)


class TestKnn:
    def test_collinear(self):
        W = build_knn([[0, 0], [1, 0], [10, 0]], 1).toarray()
        assert_array_equal(W, [[0, 1, 0], [1, 0, 0], [0, 1, 0]])

    def test_unit_square_excludes_diagonal(self):
        pts = [[0, 0], [1, 0], [1, 1], [0, 1]]
        W = build_knn(pts, 2).toarray()
        assert_array_equal(W, [[0, 1, 0, 1], [1, 0, 1, 0], [0, 1, 0, 1], [1, 0, 1, 0]])

    def test_ties_broken_by_lower_index(self):
        # location 1 is equidistant from 0 and 2
        W = build_knn([[0, 0], [1, 0], [2, 0]], 1).toarray()
        assert_array_equal(np.flatnonzero(W[1]), [0])

    def test_degree_k_everywhere(self, rng):
        pts = rng.uniform(0, 100, size=(400, 2))
        W = build_knn(pts, 10)
        assert_array_equal(W.degrees(), np.full(400, 10))
        assert np.all(W.matrix.diagonal() == 0)

    def test_matches_brute_force(self, rng):
        pts = rng.normal(size=(37, 2))
        W = build_knn(pts, 4, chunk=5).toarray()
        for i in range(37):
            d = np.hypot(*(pts - pts[i]).T)
            d[i] = np.inf
            assert set(np.flatnonzero(W[i])) == set(np.argsort(d)[:4])

    def test_rejects_k_too_large(self):
        with pytest.raises(TopologyError):
            build_knn([[0, 0], [1, 1]], 2)

    def test_rejects_non_finite(self):
        with pytest.raises(TopologyError):
            build_knn([[0, 0], [np.nan, 1], [2, 2]], 1)


class TestNormalize:
    def test_ring_four(self):
        W = row_normalize(build_circular(4, 1))
        assert_allclose(W.matrix.data, 0.5)
        assert W.row_normalized

    def test_ring_400_5(self):
        W = row_normalize(build_circular(400, 5))
        assert_allclose(W.matrix.data, 0.1)

    def test_unequal_weights(self):
        W = WeightMatrix.from_dense([[0, 2, 3], [1, 0, 0], [1, 0, 0]])
        assert_allclose(row_normalize(W).toarray()[0], [0, 0.4, 0.6])

    def test_isolated_location_named(self):
        W = WeightMatrix.from_dense([[0, 1, 0], [1, 0, 0], [0, 0, 0]])
        with pytest.raises(TopologyError, match="location 2"):
            row_normalize(W)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(3, 12), st.integers(0, 2**31 - 1))
    def test_idempotent(self, n, seed):
        r = np.random.default_rng(seed)
        A = r.uniform(0.1, 5, size=(n, n)) * (r.uniform(size=(n, n)) < 0.5)
        np.fill_diagonal(A, 0)
        A[np.arange(n), (np.arange(n) + 1) % n] = 1.0  # no isolated rows
        once = row_normalize(WeightMatrix.from_dense(A))
        twice = row_normalize(once)
        assert_allclose(twice.toarray(), once.toarray(), atol=1e-15, rtol=0)


class TestSpatialLag:
    def test_ring_average(self):
        W = row_normalize(build_circular(4, 1))
        assert_allclose(spatial_lag(W, [1, 2, 3, 4]), [3, 2, 3, 2])

    def test_zero_matrix(self):
        W = WeightMatrix.from_dense(np.zeros((3, 3)))
        assert_array_equal(spatial_lag(W, np.ones((3, 2))), np.zeros((3, 2)))

    def test_double_lag_equals_squared_matrix(self, rng):
        W = row_normalize(build_circular(20, 3))
        u = rng.normal(size=20)
        dense = W.toarray()
        assert_allclose(spatial_lag(W, spatial_lag(W, u)), (dense @ dense) @ u, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            spatial_lag(build_circular(5, 1), np.ones(4))

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-10, 10), st.floats(-10, 10), st.integers(0, 2**31 - 1))
    def test_linear(self, a, b, seed):
        r = np.random.default_rng(seed)
        W = row_normalize(build_circular(15, 2))
        M1, M2 = r.normal(size=(15, 3)), r.normal(size=(15, 3))
        assert_allclose(spatial_lag(W, a * M1 + b * M2), a * spatial_lag(W, M1) + b * spatial_lag(W, M2),
                        atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(5, 60), st.integers(1, 2), st.floats(-1e3, 1e3))
    def test_constant_preserved(self, n, K, c):
        W = row_normalize(build_circular(n, K))
        assert_allclose(spatial_lag(W, np.full(n, c)), np.full(n, c), rtol=1e-14, atol=1e-12)


class TestValidate:
    def test_valid_matrix(self):
        assert validate(row_normalize(build_circular(30, 2))) == []

    def test_self_loop(self):
        A = np.array([[0, 1, 0], [1, 0.3, 1], [0, 1, 0]])
        v = validate(WeightMatrix.from_dense(A))
        assert [(x.kind, x.index) for x in v] == [("self_loop", 1)]

    def test_unnormalized_flagged(self):
        raw = build_circular(6, 1)
        flagged = WeightMatrix(raw.matrix, row_normalized=True)
        v = validate(flagged)
        assert sorted(x.index for x in v if x.kind == "row_sum") == list(range(6))

    def test_summary_bounds(self):
        s = summary(row_normalize(build_circular(50, 5)))
        assert s["max_abs_row_sum"] == pytest.approx(1.0)
        assert s["max_abs_col_sum"] == pytest.approx(1.0)
        assert s["min_degree"] == s["max_degree"] == 10

    def test_rejects_negative(self):
        with pytest.raises(TopologyError):
            WeightMatrix.from_dense([[0, -1], [1, 0]])

    def test_immutable(self):
        W = build_circular(5, 1)
        with pytest.raises(ValueError):
            W.matrix.data[0] = 3.0


class TestFiles:
    def test_triplet_round_trip(self, tmp_path):
        W = row_normalize(build_circular(30, 3))
        write_weights(W, tmp_path / "w.csv")
        assert (tmp_path / "w.csv").read_text().splitlines()[0] == "i,j,w"
        back = read_weights(tmp_path / "w.csv")
        assert back.row_normalized
        assert_array_equal(back.toarray(), W.toarray())

    def test_bad_header(self, tmp_path):
        (tmp_path / "w.csv").write_text("a,b,c\n0,1,1\n")
        with pytest.raises(TopologyError):
            read_weights(tmp_path / "w.csv")

    def test_coordinates(self, tmp_path):
        (tmp_path / "c.csv").write_text("id,x,y\na,0,0\nb,1,0\nc,10,0\n")
        pts = read_coordinates(tmp_path / "c.csv")
        assert_array_equal(pts, [[0, 0], [1, 0], [10, 0]])
