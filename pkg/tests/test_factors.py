"""Model init, prediction, the two training algorithms, ranking, checkpoints."""

import numpy as np
import pytest

from fedrec.catalog import CatalogItem, Kind, RatingVector
from fedrec.factors import (
    DivergenceError,
    FactorModel,
    TrainingConfig,
    UnknownItemError,
    bpr_epoch,
    bpr_gradients,
    init_model,
    load_model,
    model_from_snapshot,
    model_to_snapshot,
    predict,
    rank_items,
    save_model,
    sigmoid,
    svd_gradients,
    svd_sgd_epoch,
    train_local,
)


def series_catalog(n):
    return [CatalogItem(i, f"Show {i}", ("Drama",), Kind.SERIES) for i in range(n)]


class TestInitModel:
    def test_deterministic_for_fixed_seed(self):
        a = init_model(10, 4, seed=7)
        b = init_model(10, 4, seed=7)
        assert np.array_equal(a.Q, b.Q)
        assert a.round == 0

    def test_one_by_one_within_bounds(self):
        m = init_model(1, 1, seed=0)
        assert m.Q.shape == (1, 1)
        assert -0.05 <= m.Q[0, 0] <= 0.05

    def test_neighboring_seeds_differ(self):
        assert not np.array_equal(init_model(6, 3, seed=5).Q, init_model(6, 3, seed=6).Q)

    def test_bounds_hold_everywhere(self):
        m = init_model(50, 8, seed=1)
        assert np.all(np.abs(m.Q) <= 0.05)

    def test_custom_item_ids(self):
        m = init_model(3, 2, seed=0, item_ids=[10, 20, 30])
        assert m.row_of(20) == 1
        with pytest.raises(ValueError):
            init_model(3, 2, seed=0, item_ids=[1, 2])


class TestPredict:
    def test_zero_user_scores_zero(self):
        m = init_model(4, 3, seed=0)
        assert all(predict(np.zeros(3), m, i) == 0.0 for i in m.item_ids)

    def test_hand_dot_product(self):
        m = FactorModel(k=2, item_ids=[0], Q=np.array([[3.0, -1.0]]))
        assert predict(np.array([1.0, 2.0]), m, 0) == pytest.approx(1.0)

    def test_all_ones_gives_k(self):
        k = 5
        m = FactorModel(k=k, item_ids=[0], Q=np.ones((1, k)))
        assert predict(np.ones(k), m, 0) == pytest.approx(k)

    def test_unknown_item_names_id(self):
        m = init_model(2, 2, seed=0)
        with pytest.raises(UnknownItemError, match="99"):
            predict(np.zeros(2), m, 99)


class TestSvdEpoch:
    def test_zero_error_means_zero_update(self):
        m = FactorModel(k=2, item_ids=[0], Q=np.array([[2.0, 1.0]]))
        p = np.array([1.0, 1.0])
        ratings = RatingVector("u", {0: 3})  # p.q == 3 exactly
        cfg = TrainingConfig(learning_rate=0.1, regularization=0.0, epochs=1)
        p2, delta = svd_sgd_epoch(p, m, ratings, cfg)
        assert np.array_equal(p2, p)
        assert np.array_equal(delta.item_deltas[0], np.zeros(2))

    def test_single_item_hand_step(self):
        # k=1, p=1, q=1, r=5, lr=0.1, reg=0: e=4; q -> 1.4, p -> 1.4
        m = FactorModel(k=1, item_ids=[0], Q=np.array([[1.0]]))
        cfg = TrainingConfig(learning_rate=0.1, regularization=0.0, epochs=1)
        p2, delta = svd_sgd_epoch(np.array([1.0]), m, RatingVector("u", {0: 5}), cfg)
        assert p2[0] == pytest.approx(1.4)
        assert m.Q[0, 0] == pytest.approx(1.4)
        assert delta.item_deltas[0][0] == pytest.approx(0.4)

    def test_pure_regularization_shrinks_factors(self):
        m = FactorModel(k=2, item_ids=[0], Q=np.array([[2.0, 1.0]]))
        p = np.array([1.0, 1.0])
        cfg = TrainingConfig(learning_rate=0.1, regularization=0.5, epochs=1)
        p2, _ = svd_sgd_epoch(p, m, RatingVector("u", {0: 3}), cfg)
        assert np.all(np.abs(p2) < np.abs(p))
        assert np.linalg.norm(m.Q[0]) < np.linalg.norm([2.0, 1.0])

    def test_unknown_rated_item_is_error(self):
        m = init_model(2, 2, seed=0)
        with pytest.raises(UnknownItemError):
            svd_sgd_epoch(np.zeros(2), m, RatingVector("u", {9: 4}), TrainingConfig())

    def test_divergence_raises(self):
        m = FactorModel(k=1, item_ids=[0], Q=np.array([[1e200]]))
        cfg = TrainingConfig(learning_rate=1.0, regularization=0.0, epochs=1)
        with pytest.raises(DivergenceError):
            svd_sgd_epoch(np.array([1e200]), m, RatingVector("u", {0: 1}), cfg)


class TestBprEpoch:
    def test_all_zero_factors_do_not_move(self):
        m = FactorModel(k=2, item_ids=[0, 1], Q=np.zeros((2, 2)))
        cfg = TrainingConfig(learning_rate=0.5, regularization=0.0, epochs=1)
        p2, delta = bpr_epoch(np.zeros(2), m, {0}, cfg)
        assert np.array_equal(p2, np.zeros(2))
        assert np.array_equal(m.Q, np.zeros((2, 2)))
        assert set(delta.item_deltas) == {0, 1}

    def test_hand_step(self):
        # k=1, p=1, q_i=q_j=0, lr=1, reg=0: g=0.5 -> q_i=0.5, q_j=-0.5, p=1
        m = FactorModel(k=1, item_ids=[0, 1], Q=np.zeros((2, 1)))
        cfg = TrainingConfig(learning_rate=1.0, regularization=0.0, epochs=1)
        p2, _ = bpr_epoch(np.array([1.0]), m, {0}, cfg)
        assert p2[0] == pytest.approx(1.0)
        assert m.Q[0, 0] == pytest.approx(0.5)
        assert m.Q[1, 0] == pytest.approx(-0.5)

    def test_saturated_margin_gives_negligible_update(self):
        # x-hat = 30 saturates the logistic: g < 1e-12
        m = FactorModel(k=1, item_ids=[0, 1], Q=np.array([[30.0], [0.0]]))
        cfg = TrainingConfig(learning_rate=1.0, regularization=0.0, epochs=1)
        _, delta = bpr_epoch(np.array([1.0]), m, {0}, cfg)
        assert abs(delta.item_deltas[0][0]) < 1e-12

    def test_all_items_positive_is_error(self):
        m = init_model(3, 2, seed=0)
        with pytest.raises(ValueError, match="every item is a positive"):
            bpr_epoch(np.zeros(2), m, {0, 1, 2}, TrainingConfig())


class TestGradients:
    def _random_instance(self, rng, k):
        # keep factors away from zero so relative errors are well-defined
        sign = lambda size: rng.choice([-1.0, 1.0], size=size)
        return (
            rng.uniform(0.2, 1.5, k) * sign(k),
            rng.uniform(0.2, 1.5, k) * sign(k),
            rng.uniform(0.2, 1.5, k) * sign(k),
        )

    def test_svd_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        h = 1e-5
        for _ in range(100):
            k = int(rng.integers(1, 5))
            p, q, _ = self._random_instance(rng, k)
            r = float(rng.uniform(1, 5))
            reg = float(rng.uniform(0, 0.3))

            def objective(pv, qv):
                e = r - pv @ qv
                return -0.5 * e * e - 0.5 * reg * (pv @ pv + qv @ qv)

            gp, gq = svd_gradients(p, q, r, reg)
            for i in range(k):
                dp = np.zeros(k); dp[i] = h
                num = (objective(p + dp, q) - objective(p - dp, q)) / (2 * h)
                assert abs(num - gp[i]) <= 1e-5 * max(1.0, abs(gp[i]))
                num = (objective(p, q + dp) - objective(p, q - dp)) / (2 * h)
                assert abs(num - gq[i]) <= 1e-5 * max(1.0, abs(gq[i]))

    def test_bpr_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        h = 1e-5
        for _ in range(100):
            k = int(rng.integers(1, 5))
            p, qi, qj = self._random_instance(rng, k)
            reg = float(rng.uniform(0, 0.3))

            def objective(pv, qiv, qjv):
                xhat = pv @ (qiv - qjv)
                return np.log(sigmoid(xhat)) - 0.5 * reg * (pv @ pv + qiv @ qiv + qjv @ qjv)

            gp, gqi, gqj = bpr_gradients(p, qi, qj, reg)
            for i in range(k):
                d = np.zeros(k); d[i] = h
                for grad, args_lo, args_hi in (
                    (gp[i], (p - d, qi, qj), (p + d, qi, qj)),
                    (gqi[i], (p, qi - d, qj), (p, qi + d, qj)),
                    (gqj[i], (p, qi, qj - d), (p, qi, qj + d)),
                ):
                    num = (objective(*args_hi) - objective(*args_lo)) / (2 * h)
                    assert abs(num - grad) <= 1e-5 * max(1.0, abs(grad))

    def test_descent_on_single_example(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            k = int(rng.integers(1, 5))
            p = rng.uniform(-1, 1, k)
            q = rng.uniform(-1, 1, k)
            r = float(rng.uniform(1, 5))
            e = r - p @ q
            if abs(e) < 1e-9:
                continue
            m = FactorModel(k=k, item_ids=[0], Q=q.reshape(1, -1).copy())
            cfg = TrainingConfig(learning_rate=0.01, regularization=0.0, epochs=1)
            p2, _ = svd_sgd_epoch(p, m, RatingVector("u", {0: int(round(r))}), cfg)
            e2 = int(round(r)) - p2 @ m.Q[0]
            e0 = int(round(r)) - p @ q
            if abs(e0) > 1e-9:
                assert e2 * e2 < e0 * e0


class TestDeterminismAndSwap:
    def test_identical_seeds_identical_deltas(self):
        catalog_size, k = 12, 4
        ratings = RatingVector("u", {1: 5, 3: 2, 7: 4})
        cfg = TrainingConfig(rng_seed=42)
        results = []
        for _ in range(2):
            m = init_model(catalog_size, k, seed=3)
            p, delta = train_local(np.zeros(k), m, cfg, ratings=ratings)
            results.append((p, delta))
        assert np.array_equal(results[0][0], results[1][0])
        assert results[0][1].item_deltas.keys() == results[1][1].item_deltas.keys()
        for item in results[0][1].item_deltas:
            assert np.array_equal(results[0][1].item_deltas[item], results[1][1].item_deltas[item])

    def test_bpr_sampling_deterministic(self):
        k = 3
        cfg = TrainingConfig(rng_seed=9, negative_samples_per_positive=2)
        deltas = []
        for _ in range(2):
            m = init_model(10, k, seed=5)
            _, delta = train_local(np.zeros(k), m, cfg, positives={0, 4})
            deltas.append(delta)
        assert deltas[0].item_deltas.keys() == deltas[1].item_deltas.keys()
        for item in deltas[0].item_deltas:
            assert np.array_equal(deltas[0].item_deltas[item], deltas[1].item_deltas[item])

    def test_swap_contract_shapes_preserved(self):
        k = 4
        for train in ("svd", "bpr"):
            m = init_model(8, k, seed=1)
            shape_before = m.Q.shape
            ids_before = list(m.item_ids)
            if train == "svd":
                p, _ = svd_sgd_epoch(np.zeros(k), m, RatingVector("u", {0: 4, 2: 5}), TrainingConfig())
            else:
                p, _ = bpr_epoch(np.zeros(k), m, {0, 2}, TrainingConfig())
            assert m.Q.shape == shape_before
            assert m.item_ids == ids_before
            assert p.shape == (k,)


class TestRankItems:
    def test_zero_user_ranks_by_item_id(self):
        catalog = series_catalog(6)
        m = init_model(6, 3, seed=2)
        ranked = rank_items(np.zeros(3), m, set(), True, catalog)
        assert [item for item, _ in ranked] == [0, 1, 2, 3, 4, 5]

    def test_exclude_all_is_empty(self):
        catalog = series_catalog(4)
        m = init_model(4, 2, seed=0)
        assert rank_items(np.zeros(2), m, {0, 1, 2, 3}, True, catalog) == []

    def test_scores_sorted_descending(self):
        catalog = series_catalog(3)
        m = FactorModel(k=1, item_ids=[0, 1, 2], Q=np.array([[2.0], [5.0], [1.0]]))
        ranked = rank_items(np.array([1.0]), m, set(), True, catalog)
        assert [item for item, _ in ranked] == [1, 0, 2]
        assert [score for _, score in ranked] == [5.0, 2.0, 1.0]

    def test_series_only_filters_movies(self):
        catalog = [
            CatalogItem(0, "S", ("Drama",), Kind.SERIES),
            CatalogItem(1, "M", ("Drama",), Kind.MOVIE),
        ]
        m = init_model(2, 2, seed=0)
        ranked = rank_items(np.zeros(2), m, set(), True, catalog)
        assert [item for item, _ in ranked] == [0]
        ranked_all = rank_items(np.zeros(2), m, set(), False, catalog)
        assert [item for item, _ in ranked_all] == [0, 1]


class TestCheckpoint:
    def test_snapshot_round_trip(self):
        m = init_model(5, 3, seed=4)
        m.round = 7
        clone = model_from_snapshot(model_to_snapshot(m))
        assert clone.round == 7 and clone.k == 3
        assert np.array_equal(clone.Q, m.Q)
        assert clone.item_ids == m.item_ids

    def test_file_round_trip(self, tmp_path):
        m = init_model(4, 2, seed=8)
        path = tmp_path / "model.json"
        save_model(m, path)
        clone = load_model(path)
        assert np.array_equal(clone.Q, m.Q)

    def test_version_checked(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text('{"version": 99}')
        with pytest.raises(ValueError, match="version"):
            load_model(path)
