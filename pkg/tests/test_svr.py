import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.svm import SVR
from sklearn.utils.estimator_checks import check_estimator

from loadreconf.svr import (
    EpsilonSVR,
    Hyperparams,
    SVRConvergenceError,
    dual_objective,
    kernel,
    lipschitz_bound,
    predict,
    rbf_matrix,
    risk,
    train,
)


def hand_model(beta=(), b=0.0, support=(), gamma=1.0, C=1.0, epsilon=0.1):
    support = np.asarray(support, dtype=float).reshape(len(beta), 1)
    return EpsilonSVR.from_dict({
        "hyperparams": {"gamma": gamma, "c": C, "epsilon": epsilon},
        "feature_scaler": {"mean": [0.0], "scale": [1.0]},
        "target_scaler": {"mean": 0.0, "scale": 1.0},
        "support_samples": {"features": support.tolist(), "targets": [0.0] * len(beta)},
        "beta": list(beta),
        "b": b,
    })


def linear_fixture():
    x = np.linspace(0, 1, 20)
    return x[:, None], 2 * x + 1


def standardised_problem(model, X, y):
    Xs = (X - model.x_mean_) / model.x_scale_
    ys = (y - model.y_mean_) / model.y_scale_
    return rbf_matrix(Xs, Xs, model.gamma), ys


class TestKernel:
    def test_examples(self):
        assert kernel([0.3, -1.0], [0.3, -1.0], 7.0) == 1.0
        assert kernel([0.0], [1.0], 1.0) == pytest.approx(math.exp(-1))
        assert kernel([0.0], [1.0], 1e4) < 1e-300

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            kernel([0.0, 1.0], [1.0], 1.0)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), gamma=st.floats(0.01, 10.0))
    def test_matrix_is_psd(self, seed, gamma):
        pts = np.random.default_rng(seed).normal(size=(20, 3))
        K = rbf_matrix(pts, pts, gamma)
        np.testing.assert_allclose(K, K.T)
        assert np.linalg.eigvalsh(K).min() >= -1e-8


class TestHyperparams:
    @pytest.mark.parametrize("args", [(0.0, 1.0, 0.1), (1.0, -1.0, 0.1), (1.0, 1.0, -0.1)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            Hyperparams(*args)


class TestTraining:
    def test_constant_targets_give_flat_model(self):
        X = np.random.default_rng(0).normal(size=(15, 2))
        model = train(X, np.full(15, 4.2), Hyperparams(1.0, 10.0, 0.1))
        assert np.all(model.beta_ == 0)
        np.testing.assert_array_equal(model.predict(X), 4.2)

    def test_linear_fixture_stays_in_tube(self):
        X, y = linear_fixture()
        model = train(X, y, Hyperparams(10.0, 100.0, 0.01))
        eps_raw = model.epsilon * model.y_scale_
        assert np.max(np.abs(model.predict(X) - y)) <= eps_raw + 0.02
        sv = model.support_[0]
        assert abs(predict(model, X[sv]) - y[sv]) <= eps_raw + 0.02

    def test_dual_constraints(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(size=(40, 3))
        y = np.sin(4 * X[:, 0]) + 0.1 * rng.normal(size=40)
        C = 2.0
        model = train(X, y, Hyperparams(0.5, C, 0.05))
        assert abs(model.beta_.sum()) <= 1e-8
        assert np.all(np.abs(model.beta_) <= C)

    def test_beats_random_feasible_points(self):
        rng = np.random.default_rng(11)
        X = rng.uniform(size=(10, 2))
        y = X[:, 0] - 2 * X[:, 1] + 0.05 * rng.normal(size=10)
        C, eps = 1.5, 0.1
        model = train(X, y, Hyperparams(1.0, C, eps))
        K, ys = standardised_problem(model, X, y)
        best = dual_objective(K, ys, eps, model.beta_)
        draws = rng.uniform(-C, C, size=(10_000, 10))
        draws -= draws.mean(axis=1, keepdims=True)
        draws /= np.maximum(1.0, np.abs(draws).max(axis=1, keepdims=True) / C)
        assert np.allclose(draws.sum(axis=1), 0) and np.all(np.abs(draws) <= C)
        values = -0.5 * np.einsum("ij,jk,ik->i", draws, K, draws) \
            - eps * np.abs(draws).sum(axis=1) + draws @ ys
        assert best >= values.max()

    def test_complementary_slackness(self):
        rng = np.random.default_rng(7)
        X = rng.uniform(size=(50, 2))
        y = np.cos(3 * X[:, 0]) * X[:, 1] + 0.05 * rng.normal(size=50)
        C, eps = 5.0, 0.1
        model = train(X, y, Hyperparams(2.0, C, eps))
        free = (np.abs(model.beta_) > 1e-9) & (np.abs(model.beta_) < C - 1e-9)
        assert free.any()
        err = (y - model.y_mean_) / model.y_scale_ - model.predict_scaled(X)
        np.testing.assert_allclose(np.abs(err[free]), eps, atol=2e-3)

    def test_iteration_cap_reports_best_iterate(self):
        X, y = linear_fixture()
        with pytest.raises(SVRConvergenceError) as info:
            train(X, y, Hyperparams(10.0, 100.0, 0.001), max_iter=3)
        assert info.value.violation > 1e-3
        assert abs(np.sum(info.value.beta)) <= 1e-8

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            train(np.zeros((1, 1)), np.zeros(1), Hyperparams(1.0, 1.0, 0.1))

    def test_matches_sklearn(self):
        rng = np.random.default_rng(2)
        X = rng.uniform(size=(60, 3))
        y = np.sin(3 * X[:, 0]) + X[:, 1] ** 2
        ours = train(X, y, Hyperparams(0.7, 3.0, 0.05), tol=1e-6)
        Xs = (X - ours.x_mean_) / ours.x_scale_
        ys = (y - ours.y_mean_) / ours.y_scale_
        ref = SVR(kernel="rbf", gamma=0.7, C=3.0, epsilon=0.05, tol=1e-6).fit(Xs, ys)
        np.testing.assert_allclose(ours.predict_scaled(X), ref.predict(Xs), atol=1e-4)


class TestPredictAndRisk:
    def test_zero_beta_returns_offset(self):
        assert predict(hand_model(b=0.7), [3.0]) == pytest.approx(0.7)

    def test_negated_beta_negates_prediction(self):
        pos = hand_model(beta=(0.5, -0.5), support=(0.0, 1.0))
        neg = hand_model(beta=(-0.5, 0.5), support=(0.0, 1.0))
        x = np.linspace(-1, 2, 7)[:, None]
        np.testing.assert_allclose(predict(pos, x), -predict(neg, x))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            predict(hand_model(), [1.0, 2.0])

    def test_flat_model_on_constant_data(self):
        model = train(np.arange(6.0)[:, None], np.full(6, 3.0), Hyperparams(1.0, 1.0, 0.1))
        assert risk(model, np.arange(6.0)[:, None], np.full(6, 3.0)) == 0.0

    def test_single_sample_outside_tube(self):
        C, eps = 2.5, 0.2
        assert risk(hand_model(C=C, epsilon=eps), [[0.0]], [eps + 1]) == pytest.approx(C)

    def test_risk_non_increasing_in_epsilon(self):
        X = np.linspace(0, 1, 12)[:, None]
        y = np.sin(5 * X[:, 0])
        model = train(X, y, Hyperparams(1.0, 1.0, 0.1))
        values = []
        for eps in np.linspace(0, 1, 11):
            model.epsilon = eps
            values.append(risk(model, X, y))
        assert all(b <= a for a, b in zip(values, values[1:]))

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_lipschitz_bound(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.uniform(size=(25, 2))
        model = train(X, np.sin(4 * X[:, 0]) + X[:, 1], Hyperparams(1.5, 4.0, 0.05))
        L = lipschitz_bound(model)
        a = rng.uniform(-0.5, 1.5, size=(50, 2))
        d = rng.normal(scale=0.05, size=(50, 2))
        lhs = np.abs(model.predict(a + d) - model.predict(a))
        assert np.all(lhs <= L * np.linalg.norm(d, axis=1) + 1e-12)


def test_json_round_trip():
    X, y = linear_fixture()
    model = train(X, y, Hyperparams(10.0, 100.0, 0.01))
    again = EpsilonSVR.from_json(model.to_json())
    grid = np.linspace(-0.2, 1.2, 30)[:, None]
    np.testing.assert_array_equal(again.predict(grid), model.predict(grid))


@pytest.mark.slow
def test_sklearn_estimator_contract():
    check_estimator(EpsilonSVR())
