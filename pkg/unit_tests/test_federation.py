import unittest

import numpy as np

from encoder import CLIENT_DIVISION
from fed_config import FederationConfig, RunMode
from federation import client_shares, fedavg_reference, load_data, run_centralized, run_federation
from model import flatten_weights, models_equal
from synthetic_data import SyntheticDatasetSpec

SMALL_DATA = SyntheticDatasetSpec(train_per_class=60, test_per_class=40, feature_dim=4)


def small_config(**changes) -> FederationConfig:
    base = dict(c=3, rounds=2, mode=RunMode.PLAIN, epochs=3, hidden_units=4, dataset=SMALL_DATA, seed=11)
    base.update(changes)
    return FederationConfig(**base)


class TestPlainFederation(unittest.TestCase):
    def test_matches_reference_fedavg_exactly(self):
        cfg = small_config()
        result = run_federation(cfg)
        history = fedavg_reference(cfg)
        self.assertIsNone(result.error)
        self.assertEqual(result.rounds_completed, 2)
        self.assertEqual(len(history), 2)
        for model in result.models:
            self.assertTrue(models_equal(model, history[-1]))

    def test_metrics_per_round_and_timings(self):
        result = run_federation(small_config(rounds=3, epochs=10))
        self.assertEqual(len(result.metrics), 3)
        self.assertGreater(result.final_metrics.accuracy, 0.6)
        totals = result.phase_totals()
        self.assertIn("train", totals)
        self.assertIn("transfer", totals)
        self.assertIn("aggregate", totals)
        self.assertNotIn("encrypt", totals)

    def test_explicit_partition(self):
        cfg = small_config(partition=(0.5, 0.3, 0.2), rounds=1)
        train, _ = load_data(cfg)
        self.assertEqual([len(s) for s in client_shares(cfg, train)], [60, 36, 24])
        self.assertIsNone(run_federation(cfg).error)

    def test_reruns_are_identical(self):
        cfg = small_config(rounds=1)
        a, b = run_federation(cfg), run_federation(cfg)
        self.assertTrue(models_equal(a.models[0], b.models[0]))
        self.assertEqual(a.final_metrics, b.final_metrics)


class TestEncryptedFederation(unittest.TestCase):
    def test_sec128_tracks_plain_weights(self):
        cfg = small_config(rounds=1, mode=RunMode.SEC128, division=CLIENT_DIVISION, frac_bits=14)
        data = load_data(cfg)
        encrypted = run_federation(cfg, data)
        self.assertIsNone(encrypted.error)
        reference = fedavg_reference(cfg, data)[-1]
        got = flatten_weights(encrypted.models[0])[0].values
        want = flatten_weights(reference)[0].values
        self.assertLessEqual(np.max(np.abs(got - want)), 1e-3)
        for model in encrypted.models[1:]:
            self.assertTrue(models_equal(model, encrypted.models[0]))
        totals = encrypted.phase_totals()
        self.assertGreater(totals["encrypt"], 0.0)
        self.assertGreater(totals["decrypt"], 0.0)

    def test_server_division_sec192(self):
        cfg = small_config(c=2, rounds=1, mode=RunMode.SEC192)
        result = run_federation(cfg)
        self.assertIsNone(result.error)
        self.assertEqual(result.encoding.frac_bits, 8)
        self.assertEqual(result.rounds_completed, 1)

    def test_failed_round_keeps_partial_result(self):
        # 18 fractional bits leave no headroom for the server-side multiply
        cfg = small_config(rounds=2, mode=RunMode.SEC192, frac_bits=18)
        result = run_federation(cfg)
        self.assertTrue(result.error.startswith("round 1:"))
        self.assertIn("ENCODING_RANGE", result.error)
        self.assertEqual(result.rounds_completed, 0)
        self.assertEqual(result.metrics, [])
        self.assertEqual(len(result.models), cfg.c)


class TestCentralizedBaseline(unittest.TestCase):
    def test_scores_every_pass_and_reproduces(self):
        cfg = small_config(rounds=3, epochs=10)
        metrics = run_centralized(cfg)
        self.assertEqual(len(metrics), 3)
        self.assertGreater(metrics[-1].accuracy, 0.6)
        self.assertEqual(run_centralized(cfg), metrics)

    def test_ignores_client_count(self):
        self.assertEqual(run_centralized(small_config(c=2)), run_centralized(small_config(c=3)))

    def test_uses_supplied_data(self):
        cfg = small_config(rounds=1)
        self.assertEqual(run_centralized(cfg, load_data(cfg)), run_centralized(cfg))


if __name__ == "__main__":
    unittest.main()
