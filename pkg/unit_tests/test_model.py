import unittest

import numpy as np
from sklearn.datasets import make_blobs

from encoder import WeightVector
from errors import DomainError, ShapeError
from model import (
    Dataset,
    DenseLayer,
    MLPModel,
    TrainConfig,
    class_metrics,
    compute_metrics,
    flatten_weights,
    forward_proba,
    init_model,
    load_weights,
    loss_and_gradients,
    models_equal,
    numerical_gradients,
    predict,
    train_local,
)


def toy_data(rows=200, dim=4, seed=0) -> Dataset:
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, rows)
    features = rng.normal(size=(rows, dim)) + labels[:, None] * 1.5
    return Dataset(features, labels)


class TestModelStructure(unittest.TestCase):
    def test_init_shapes_and_names(self):
        model = init_model(8, hidden_units=16, seed=1)
        self.assertEqual([layer.name for layer in model.layers], ["dense_1", "dense_2"])
        self.assertEqual(model.layers[0].weights.shape, (8, 16))
        self.assertEqual(model.layers[1].weights.shape, (16, 1))
        self.assertEqual(model.input_dim, 8)
        limit = 1 / np.sqrt(8)
        self.assertTrue(np.all(np.abs(model.layers[0].weights) <= limit))

    def test_rejects_incompatible_layers(self):
        with self.assertRaises(ShapeError):
            MLPModel([
                DenseLayer("a", np.zeros((4, 3)), np.zeros(3), "relu"),
                DenseLayer("b", np.zeros((2, 1)), np.zeros(1), "sigmoid"),
            ])

    def test_requires_single_sigmoid_output(self):
        with self.assertRaises(ShapeError):
            MLPModel([DenseLayer("a", np.zeros((4, 2)), np.zeros(2), "sigmoid")])

    def test_dataset_length_mismatch(self):
        with self.assertRaises(ShapeError):
            Dataset(np.zeros((3, 2)), np.zeros(2))

    def test_train_config_validation(self):
        with self.assertRaises(DomainError):
            TrainConfig(learning_rate=0)
        with self.assertRaises(DomainError):
            TrainConfig(epochs=0)
        with self.assertRaises(DomainError):
            TrainConfig(batch_size=0)


class TestGradients(unittest.TestCase):
    def test_analytic_matches_finite_differences(self):
        for seed in range(3):
            model = init_model(5, hidden_units=4, seed=seed)
            data = toy_data(rows=20, dim=5, seed=seed)
            _, analytic = loss_and_gradients(model, data)
            numeric = numerical_gradients(model, data)
            for (dw, db), (nw, nb) in zip(analytic, numeric):
                for a, n in ((dw, nw), (db, nb)):
                    scale = np.maximum(np.abs(a) + np.abs(n), 1e-8)
                    rel = np.abs(a - n) / scale
                    # entries whose gradient is ~0 are compared absolutely
                    ok = (rel < 1e-4) | (np.abs(a - n) < 1e-9)
                    self.assertTrue(np.all(ok), f"max relative error {rel.max()}")

    def test_loss_is_bce(self):
        model = init_model(2, hidden_units=0, seed=0)
        data = Dataset(np.array([[0.5, -1.0], [1.0, 2.0]]), np.array([1, 0]))
        p = forward_proba(model, data.features)
        expected = -np.mean([np.log(p[0]), np.log(1 - p[1])])
        loss, _ = loss_and_gradients(model, data)
        self.assertAlmostEqual(loss, expected, places=12)


class TestTraining(unittest.TestCase):
    def test_same_seed_gives_identical_weights(self):
        model = init_model(4, seed=2)
        data = toy_data()
        cfg = TrainConfig(epochs=3, seed=9)
        self.assertTrue(models_equal(train_local(model, data, cfg), train_local(model, data, cfg)))

    def test_input_model_unchanged(self):
        model = init_model(4, seed=2)
        snapshot = model.copy()
        train_local(model, toy_data(), TrainConfig(epochs=2))
        self.assertTrue(models_equal(model, snapshot))

    def test_learns_overlapping_gaussians(self):
        model = init_model(4, seed=3)
        data = toy_data(rows=400)
        trained = train_local(model, data, TrainConfig(epochs=20))
        self.assertGreater(compute_metrics(predict(trained, data.features), data.labels).accuracy, 0.8)

    def test_fits_linearly_separable_blobs(self):
        features, labels = make_blobs(n_samples=[100, 100], centers=[[-3.0, -3.0], [3.0, 3.0]],
                                      cluster_std=0.5, random_state=0)
        data = Dataset(features, labels)
        trained = train_local(init_model(2, seed=0), data, TrainConfig(epochs=20))
        self.assertGreaterEqual(compute_metrics(predict(trained, data.features), data.labels).accuracy, 0.95)

    def test_empty_dataset(self):
        with self.assertRaises(DomainError):
            train_local(init_model(4), Dataset(np.zeros((0, 4)), np.zeros(0)), TrainConfig())

    def test_feature_width_mismatch(self):
        with self.assertRaises(ShapeError):
            train_local(init_model(4), toy_data(dim=5), TrainConfig())


class TestFlattenLoad(unittest.TestCase):
    def test_manifest_layout(self):
        model = init_model(8, hidden_units=16, seed=0)
        vector, manifest = flatten_weights(model)
        self.assertEqual(len(vector), 8 * 16 + 16 + 16 + 1)
        self.assertEqual([e.name for e in manifest.entries],
                         ["dense_1/weights", "dense_1/bias", "dense_2/weights", "dense_2/bias"])
        self.assertEqual(manifest.entries[1].offset, 128)
        self.assertEqual(manifest.total, len(vector))

    def test_flatten_then_load_is_identity(self):
        model = init_model(5, hidden_units=3, seed=4)
        vector, manifest = flatten_weights(model)
        self.assertTrue(models_equal(load_weights(model, vector, manifest), model))

    def test_load_rejects_wrong_length(self):
        model = init_model(5, hidden_units=3, seed=4)
        vector, manifest = flatten_weights(model)
        with self.assertRaises(ShapeError):
            load_weights(model, WeightVector(vector.values[:-1]), manifest)

    def test_load_rejects_other_architecture(self):
        model = init_model(5, hidden_units=3, seed=4)
        _, other_manifest = flatten_weights(init_model(5, hidden_units=4, seed=4))
        vector, _ = flatten_weights(model)
        with self.assertRaises(ShapeError):
            load_weights(model, vector, other_manifest)


class TestMetrics(unittest.TestCase):
    def test_weighted_recall_equals_accuracy(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            size = int(rng.integers(5, 60))
            actual = rng.integers(0, 2, size)
            predicted = rng.integers(0, 2, size)
            report = compute_metrics(predicted, actual)
            self.assertAlmostEqual(report.recall, report.accuracy, places=12)

    def test_perfect_prediction(self):
        report = compute_metrics([0, 1, 1, 0], [0, 1, 1, 0])
        self.assertEqual((report.accuracy, report.precision, report.recall, report.f1), (1.0, 1.0, 1.0, 1.0))

    def test_empty_input(self):
        with self.assertRaises(DomainError):
            compute_metrics([], [])

    def test_class_metrics(self):
        precision, recall, f1 = class_metrics([1, 1, 0, 0], [1, 0, 1, 0])
        self.assertEqual((precision, recall, f1), (0.5, 0.5, 0.5))

    def test_hand_built_single_feature_model(self):
        model = MLPModel([DenseLayer("dense_1", np.array([[10.0]]), np.zeros(1), "sigmoid")])
        self.assertEqual(predict(model, np.array([[1.0], [-1.0]])).tolist(), [1, 0])

    def test_predict_threshold(self):
        model = init_model(1, hidden_units=0, seed=0)
        model.layers[0].weights[:] = 0.0
        model.layers[0].bias[:] = 0.0
        self.assertEqual(predict(model, np.zeros((3, 1))).tolist(), [1, 1, 1])


if __name__ == "__main__":
    unittest.main()
