import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from saferl.exceptions import RankDeficiencyError, SerializationError, ShapeError
from saferl.regression import (
    FeatureMap, TrainingConfig, fit_linear_least_squares, fit_linear_model, fit_mlp_regressor,
    init_mlp_params, mlp_loss_and_gradients, model_from_dict, model_to_dict,
)


class FeatureMapTests(SimpleTestCase):
    def test_output_dimension(self):
        fmap = FeatureMap(state_dim=2, n_actions=3, degree=2)
        self.assertEqual(fmap.n_terms, 6)
        self.assertEqual(fmap.output_dim, 18)
        self.assertEqual(FeatureMap(state_dim=2, n_actions=3, degree=2, include_bias=False).n_terms, 5)

    def test_features_vanish_outside_action_block(self):
        fmap = FeatureMap(state_dim=1, n_actions=3, degree=2)
        phi = fmap.transform(np.array([[2.0], [2.0]]), np.array([1, 2]))
        assert_array_equal(phi[0], [0, 0, 0, 1, 2, 4, 0, 0, 0])
        assert_array_equal(phi[1], [0, 0, 0, 0, 0, 0, 1, 2, 4])

    def test_actions_required_for_multi_action_map(self):
        with self.assertRaises(ShapeError):
            FeatureMap(state_dim=1, n_actions=2).transform(np.zeros((3, 1)))


class LeastSquaresTests(SimpleTestCase):
    def test_ridge_solution_is_stationary(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(50, 4))
        y = rng.normal(size=50)
        w = fit_linear_least_squares(X, y, ridge=1e-3)
        gradient = 2 * X.T @ (X @ w - y) + 2 * 1e-3 * w
        self.assertLess(np.abs(gradient).max(), 1e-8)

    def test_exact_fit_without_ridge(self):
        X = np.column_stack([np.ones(5), np.arange(5.0)])
        y = 1.5 - 2.0 * np.arange(5.0)
        assert_allclose(fit_linear_least_squares(X, y, ridge=0.0), [1.5, -2.0], atol=1e-10)

    def test_singular_gram_without_ridge(self):
        X = np.column_stack([np.ones(6), np.ones(6)])
        with self.assertRaises(RankDeficiencyError):
            fit_linear_least_squares(X, np.zeros(6), ridge=0.0)
        fit_linear_least_squares(X, np.zeros(6), ridge=1e-6)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            fit_linear_least_squares(np.zeros((4, 2)), np.zeros(3))

    def test_batch_prediction_matches_row_loop(self):
        rng = np.random.default_rng(1)
        states = rng.normal(size=(30, 2))
        actions = rng.integers(0, 2, 30)
        fmap = FeatureMap(state_dim=2, n_actions=2, degree=2)
        model = fit_linear_model(states, rng.normal(size=30), fmap, actions=actions)
        looped = [model.predict(states[i:i + 1], actions[i:i + 1])[0] for i in range(30)]
        assert_allclose(model.predict(states, actions), looped)
        assert_allclose(model.action_values(states)[np.arange(30), actions], looped)
        self.assertGreater(model.gram_min_eigenvalue, 0)


class MLPTests(SimpleTestCase):
    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(2)
        params = init_mlp_params(3, 2, 8, rng)
        X = rng.normal(size=(5, 3))
        y = rng.normal(size=5)
        actions = np.array([0, 1, 1, 0, 1])
        _, grads = mlp_loss_and_gradients(params, X, y, actions)
        eps = 1e-6
        for name, value in params.items():
            numeric = np.zeros_like(value)
            for idx in np.ndindex(value.shape):
                plus = {k: v.copy() for k, v in params.items()}
                minus = {k: v.copy() for k, v in params.items()}
                plus[name][idx] += eps
                minus[name][idx] -= eps
                numeric[idx] = (mlp_loss_and_gradients(plus, X, y, actions)[0]
                                - mlp_loss_and_gradients(minus, X, y, actions)[0]) / (2 * eps)
            assert_allclose(grads[name], numeric, rtol=1e-4, atol=1e-7)

    def test_learns_identity_function(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(-1, 1, 500)
        model = fit_mlp_regressor(x, x, config=TrainingConfig(seed=4))
        grid = np.linspace(-1, 1, 101)
        rmse = np.sqrt(np.mean((model.predict(grid) - grid) ** 2))
        self.assertLess(rmse, 0.05)
        self.assertEqual(model.epochs_trained, 50)
        self.assertLess(model.loss_history[-1], model.loss_history[0])

    def test_training_is_deterministic_given_seed(self):
        x = np.linspace(-1, 1, 40)
        config = TrainingConfig(epochs=3, seed=9)
        first = fit_mlp_regressor(x, x ** 2, config=config)
        second = fit_mlp_regressor(x, x ** 2, config=config)
        assert_array_equal(first.parameter_vector(), second.parameter_vector())

    def test_q_network_heads(self):
        rng = np.random.default_rng(5)
        states = rng.normal(size=(60, 1))
        actions = rng.integers(0, 3, 60)
        model = fit_mlp_regressor(states, rng.normal(size=60), TrainingConfig(epochs=2), actions=actions, n_outputs=3)
        self.assertEqual(model.action_values(states).shape, (60, 3))
        assert_allclose(model.predict(states, actions), model.action_values(states)[np.arange(60), actions])

    def test_warm_start_continues_epoch_count(self):
        x = np.linspace(-1, 1, 20)
        first = fit_mlp_regressor(x, x, TrainingConfig(epochs=2))
        second = fit_mlp_regressor(x, x, TrainingConfig(epochs=3), init=first)
        self.assertEqual(second.epochs_trained, 5)
        self.assertEqual(len(second.loss_history), 5)

    def test_non_finite_targets_rejected(self):
        with self.assertRaises(ShapeError):
            fit_mlp_regressor(np.zeros(3), np.array([0.0, np.nan, 1.0]))


class SerialisationTests(SimpleTestCase):
    def test_restored_models_predict_identically(self):
        rng = np.random.default_rng(6)
        states = rng.normal(size=(25, 1))
        linear = fit_linear_model(states, rng.normal(size=25), FeatureMap(state_dim=1))
        network = fit_mlp_regressor(states, rng.normal(size=25), TrainingConfig(epochs=1, hidden_units=4))
        for model in (linear, network):
            restored = model_from_dict(model_to_dict(model))
            assert_allclose(restored.predict(states), model.predict(states))

    def test_unknown_type(self):
        with self.assertRaises(SerializationError):
            model_from_dict({"type": "forest"})
