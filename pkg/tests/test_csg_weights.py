import numpy as np
import pytest

from smma.csg_weights import (
    JointMetric,
    ParamCoord,
    SampleRecord,
    SampleStore,
    aggregate,
    aggregate_precomposed,
    empirical_weights,
    evict_min_weight,
    joint_distance,
    nearest_index,
    pseudoexact_weights,
)
from smma.smoothing import SmoothingParams, h_eval


def flat_metric(dim=1, design_scale=1.0, param_scale=1.0, scale=1.0):
    coords = tuple(ParamCoord("flat", scale=scale) for _ in range(dim))
    return JointMetric(coords=coords, design_scale=design_scale,
                       param_scale=param_scale)


def circle_metric(period=2 * np.pi, scale=1.0, design_scale=1.0):
    return JointMetric(coords=(ParamCoord("circular", period=period,
                                          scale=scale),),
                       design_scale=design_scale, param_scale=1.0)


def make_store(metric, designs, params, values=None, grads=None):
    store = SampleStore(metric=metric)
    designs = np.atleast_2d(designs)
    params = np.atleast_2d(np.asarray(params, dtype=float).reshape(len(designs), -1))
    for k in range(len(designs)):
        v = 0.0 if values is None else float(values[k])
        g = np.zeros_like(designs[k]) if grads is None else grads[k]
        store.append(SampleRecord(designs[k], params[k], v, g, k))
    return store


class TestJointDistance:
    def test_identical_points(self):
        m = flat_metric(dim=2)
        u = np.array([0.3, 0.4, 0.5])
        x = np.array([0.1, 0.9])
        assert joint_distance(m, u, x, u, x) == 0.0

    def test_circular_wraparound(self):
        m = circle_metric()
        u = np.zeros(3)
        d = joint_distance(m, u, [0.1], u, [2 * np.pi - 0.1])
        assert d == pytest.approx(0.2, abs=1e-12)

    def test_zero_design_scale_reduces_to_param_distance(self):
        m = flat_metric(dim=1, design_scale=0.0)
        d = joint_distance(m, np.zeros(4), [0.25], np.ones(4), [0.75])
        assert d == pytest.approx(0.5, abs=1e-14)

    def test_dimension_mismatch(self):
        m = flat_metric(dim=2)
        with pytest.raises(ValueError):
            joint_distance(m, np.zeros(2), [0.1], np.zeros(2), [0.1, 0.2])


class TestNearestIndex:
    def test_single_record(self):
        store = make_store(flat_metric(), np.zeros((1, 3)), [[0.5]])
        assert nearest_index(store, np.zeros(3), [0.9]) == 0

    def test_exact_hit_and_duplicate_tiebreak(self):
        designs = np.zeros((3, 2))
        store = make_store(flat_metric(), designs, [[0.3], [0.7], [0.7]])
        assert nearest_index(store, np.zeros(2), [0.7]) == 1

    def test_empty_store(self):
        store = SampleStore(metric=flat_metric())
        with pytest.raises(ValueError):
            nearest_index(store, np.zeros(2), [0.1])

    def test_against_linear_scan_oracle(self):
        rng = np.random.default_rng(42)
        m = JointMetric(
            coords=(ParamCoord("flat", scale=1.0),
                    ParamCoord("circular", period=1.0, scale=1.0)),
            design_scale=0.8, param_scale=1.3)
        designs = rng.uniform(size=(100, 4))
        params = np.column_stack([rng.uniform(size=100), rng.uniform(size=100)])
        store = make_store(m, designs, params)
        for _ in range(1000):
            u = rng.uniform(size=4)
            x = rng.uniform(size=2)
            best, best_d = 0, np.inf
            for k in range(100):
                d = joint_distance(m, u, x, designs[k], params[k])
                if d < best_d - 1e-15:
                    best, best_d = k, d
            assert nearest_index(store, u, x) == best


class TestPseudoexactWeights:
    def test_single_record_takes_all_mass(self):
        store = make_store(flat_metric(), np.zeros((1, 2)), [[0.4]])
        pts = np.linspace(0, 1, 16)[:, None]
        alpha = pseudoexact_weights(store, np.zeros(2), pts, np.full(16, 1 / 16))
        np.testing.assert_array_equal(alpha, [1.0])

    def test_two_records_split_at_midpoint(self):
        store = make_store(flat_metric(), np.zeros((2, 2)), [[0.2], [0.8]])
        pts = np.array([[0.125], [0.375], [0.625], [0.875]])
        alpha = pseudoexact_weights(store, np.zeros(2), pts, np.full(4, 0.25))
        np.testing.assert_allclose(alpha, [0.5, 0.5])

    def test_dense_oracle_1d(self):
        # quadrature assignment error is bounded by twice the covering radius
        rng = np.random.default_rng(5)
        for trial in range(5):
            K = rng.integers(2, 9)
            designs = rng.uniform(size=(K, 3))
            params = rng.uniform(size=(K, 1))
            store = make_store(flat_metric(), designs, params)
            u = rng.uniform(size=3)

            T = 256
            pts = ((np.arange(T) + 0.5) / T)[:, None]
            alpha = pseudoexact_weights(store, u, pts, np.full(T, 1.0 / T))

            n_dense = 100_000
            dense = ((np.arange(n_dense) + 0.5) / n_dense)[:, None]
            exact = pseudoexact_weights(store, u, dense,
                                        np.full(n_dense, 1.0 / n_dense))
            cover = 0.5 / T
            assert np.abs(alpha - exact).max() <= 2 * cover + 1e-12

    def test_refinement_never_worsens_bound(self):
        rng = np.random.default_rng(6)
        designs = rng.uniform(size=(5, 3))
        params = rng.uniform(size=(5, 1))
        store = make_store(flat_metric(), designs, params)
        u = rng.uniform(size=3)
        n_dense = 200_000
        dense = ((np.arange(n_dense) + 0.5) / n_dense)[:, None]
        exact = pseudoexact_weights(store, u, dense,
                                    np.full(n_dense, 1.0 / n_dense))
        prev_bound = np.inf
        for T in (32, 64, 128, 256):
            pts = ((np.arange(T) + 0.5) / T)[:, None]
            alpha = pseudoexact_weights(store, u, pts, np.full(T, 1.0 / T))
            bound = 2 * (0.5 / T)
            assert bound <= prev_bound
            assert np.abs(alpha - exact).max() <= bound + 1e-12
            prev_bound = bound

    def test_bad_quadrature_rejected(self):
        store = make_store(flat_metric(), np.zeros((1, 2)), [[0.5]])
        with pytest.raises(ValueError):
            pseudoexact_weights(store, np.zeros(2), [[0.1], [0.2]], [0.6, 0.5])
        with pytest.raises(ValueError):
            pseudoexact_weights(SampleStore(metric=flat_metric()), np.zeros(2),
                                [[0.1]], [1.0])

    def test_weights_valid_over_many_random_configs(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            K = rng.integers(1, 7)
            dim = rng.integers(1, 4)
            designs = rng.uniform(size=(K, dim))
            params = rng.uniform(size=(K, 1))
            store = make_store(flat_metric(), designs, params)
            T = rng.integers(1, 33)
            pts = rng.uniform(size=(T, 1))
            w = rng.uniform(0.1, 1.0, size=T)
            alpha = pseudoexact_weights(store, rng.uniform(size=dim), pts,
                                        w / w.sum())
            assert np.all(alpha >= 0.0)
            assert abs(alpha.sum() - 1.0) < 1e-9


class TestEmpiricalWeights:
    def test_single_record(self):
        store = make_store(flat_metric(), np.zeros((1, 2)), [[0.3]])
        np.testing.assert_array_equal(empirical_weights(store, np.zeros(2)),
                                      [1.0])

    def test_two_separated_records(self):
        store = make_store(flat_metric(), np.zeros((2, 2)), [[0.2], [0.8]])
        np.testing.assert_allclose(empirical_weights(store, np.zeros(2)),
                                   [0.5, 0.5])

    def test_all_identical_smallest_index_wins(self):
        store = make_store(flat_metric(), np.zeros((4, 2)),
                           [[0.5], [0.5], [0.5], [0.5]])
        np.testing.assert_array_equal(empirical_weights(store, np.zeros(2)),
                                      [1.0, 0.0, 0.0, 0.0])

    def test_equals_pseudoexact_at_sample_points(self):
        rng = np.random.default_rng(8)
        designs = rng.uniform(size=(12, 5))
        params = rng.uniform(size=(12, 2))
        store = make_store(flat_metric(dim=2), designs, params)
        u = rng.uniform(size=5)
        alpha_e = empirical_weights(store, u)
        alpha_p = pseudoexact_weights(store, u, params, np.full(12, 1 / 12))
        np.testing.assert_array_equal(alpha_e, alpha_p)


class TestAggregate:
    def smoothing(self):
        return SmoothingParams(a1=35.0, a2=0.05, a3=5.0, c_max=2.0,
                               p_level=0.05)

    def test_single_record(self):
        p = self.smoothing()
        grad = np.array([0.5, -1.0])
        store = make_store(flat_metric(), np.zeros((1, 2)), [[0.1]],
                           values=[2.3], grads=[grad])
        g, dg = aggregate(store, np.array([1.0]), p)
        from smma.smoothing import h_deriv
        assert g == pytest.approx(h_eval(0.3, p))
        np.testing.assert_allclose(dg, h_deriv(0.3, p) * grad)

    def test_identical_records_any_weights(self):
        p = self.smoothing()
        grad = np.array([1.0, 2.0, 3.0])
        store = make_store(flat_metric(), np.zeros((3, 3)),
                           [[0.1], [0.5], [0.9]],
                           values=[2.5] * 3, grads=[grad] * 3)
        for w in ([1, 0, 0], [0.2, 0.3, 0.5]):
            g, dg = aggregate(store, np.array(w, dtype=float), p)
            assert g == pytest.approx(h_eval(0.5, p))

    def test_analytic_integrand_matches_dense_trapezoid(self):
        # c(omega) = 2 + cos(omega), omega uniform on the circle; weights
        # from a 4096-point circle discretization (Voronoi-cell masses)
        p = self.smoothing()
        rng = np.random.default_rng(11)
        omegas = rng.uniform(0, 2 * np.pi, size=200)
        values = 2.0 + np.cos(omegas)
        store = make_store(circle_metric(), np.zeros((200, 2)),
                           omegas[:, None], values=values)
        T = 4096
        pts = np.linspace(0, 2 * np.pi, T, endpoint=False)[:, None]
        alpha = pseudoexact_weights(store, np.zeros(2), pts, np.full(T, 1 / T))
        g_hat, _ = aggregate(store, alpha, p)

        dense = np.linspace(0, 2 * np.pi, 10_000, endpoint=False)
        g_ref = np.mean(h_eval(2.0 + np.cos(dense) - p.c_max, p))
        assert abs(g_hat - g_ref) < 1e-2

    def test_error_shrinks_with_sample_count(self):
        p = self.smoothing()
        dense = np.linspace(0, 2 * np.pi, 10_000, endpoint=False)
        g_ref = np.mean(h_eval(2.0 + np.cos(dense) - p.c_max, p))
        T = 4096
        pts = np.linspace(0, 2 * np.pi, T, endpoint=False)[:, None]
        w = np.full(T, 1.0 / T)
        errs = []
        for n in (25, 100, 400):
            per_seed = []
            for seed in range(10):
                rng = np.random.default_rng(seed)
                om = rng.uniform(0, 2 * np.pi, size=n)
                store = make_store(circle_metric(), np.zeros((n, 1)),
                                   om[:, None], values=2.0 + np.cos(om))
                alpha = pseudoexact_weights(store, np.zeros(1), pts, w)
                g_hat, _ = aggregate(store, alpha, p)
                per_seed.append(abs(g_hat - g_ref))
            errs.append(np.median(per_seed))
        assert errs[0] >= errs[1] >= errs[2]

    def test_precomposed_plain_average(self):
        grads = [np.array([1.0, 0.0]), np.array([0.0, 2.0])]
        store = make_store(flat_metric(), np.zeros((2, 2)), [[0.2], [0.8]],
                           values=[0.3, 0.7], grads=grads)
        g, dg = aggregate_precomposed(store, np.array([0.25, 0.75]))
        assert g == pytest.approx(0.25 * 0.3 + 0.75 * 0.7)
        np.testing.assert_allclose(dg, [0.25, 1.5])

    def test_bad_weights(self):
        store = make_store(flat_metric(), np.zeros((2, 2)), [[0.2], [0.8]])
        with pytest.raises(ValueError):
            aggregate(store, np.array([0.7, 0.5]), self.smoothing())


class TestEviction:
    def test_removes_zero_weight_record(self):
        store = make_store(flat_metric(), np.zeros((3, 2)),
                           [[0.1], [0.5], [0.9]])
        evict_min_weight(store, np.array([0.5, 0.0, 0.5]), 1)
        assert len(store) == 2
        np.testing.assert_allclose(store._stacked()["params"].ravel(),
                                   [0.1, 0.9])

    def test_batch_eviction_order_preserved(self):
        store = make_store(flat_metric(), np.zeros((5, 2)),
                           [[0.1], [0.2], [0.3], [0.4], [0.5]])
        evict_min_weight(store, np.array([0.05, 0.4, 0.05, 0.1, 0.4]), 3)
        np.testing.assert_allclose(store._stacked()["params"].ravel(),
                                   [0.2, 0.5])

    def test_tie_break_smallest_index(self):
        store = make_store(flat_metric(), np.zeros((3, 2)),
                           [[0.1], [0.5], [0.9]])
        evict_min_weight(store, np.array([0.25, 0.25, 0.5]), 1)
        np.testing.assert_allclose(store._stacked()["params"].ravel(),
                                   [0.5, 0.9])

    def test_cannot_drain_store(self):
        store = make_store(flat_metric(), np.zeros((2, 2)), [[0.1], [0.9]])
        with pytest.raises(ValueError):
            evict_min_weight(store, np.array([0.5, 0.5]), 2)

    def test_reweighting_after_eviction_sums_to_one(self):
        rng = np.random.default_rng(13)
        designs = rng.uniform(size=(10, 3))
        store = make_store(flat_metric(), designs, rng.uniform(size=(10, 1)))
        alpha = empirical_weights(store, rng.uniform(size=3))
        evict_min_weight(store, alpha, 4)
        alpha2 = empirical_weights(store, rng.uniform(size=3))
        assert abs(alpha2.sum() - 1.0) < 1e-12


class TestStoreIO:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(17)
        m = JointMetric(coords=(ParamCoord("circular", period=2 * np.pi,
                                           scale=2 * np.pi),),
                        design_scale=1.0, param_scale=1.0)
        store = SampleStore(metric=m, capacity=50)
        for k in range(7):
            store.append(SampleRecord(rng.uniform(size=6),
                                      rng.uniform(size=1),
                                      float(rng.standard_normal()),
                                      rng.standard_normal(6), k))
        path = tmp_path / "store.npz"
        store.save(path)
        loaded = SampleStore.load(path)
        assert loaded.capacity == 50
        assert loaded.metric == m
        assert len(loaded) == 7
        for a, b in zip(store.records, loaded.records):
            np.testing.assert_array_equal(a.design_snapshot, b.design_snapshot)
            np.testing.assert_array_equal(a.param, b.param)
            assert a.inner_value == b.inner_value
            np.testing.assert_array_equal(a.inner_gradient, b.inner_gradient)
            assert a.iteration_born == b.iteration_born
