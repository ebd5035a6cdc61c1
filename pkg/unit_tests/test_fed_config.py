import os
import tempfile
import unittest
from unittest.mock import patch

from encoder import CLIENT_DIVISION
from errors import ConfigError
from fed_config import (
    FederationConfig,
    RunMode,
    get_listen_addr,
    get_output_dir,
    load_config,
    parse_config,
    split_address,
)
from ring import derive_seed


class TestFederationConfig(unittest.TestCase):
    def test_defaults(self):
        cfg = FederationConfig()
        self.assertEqual((cfg.c, cfg.rounds, cfg.mode), (3, 5, RunMode.SEC128))
        self.assertEqual(cfg.effective_key_seed, derive_seed(0, "dealer"))

    def test_validation(self):
        with self.assertRaises(ConfigError):
            FederationConfig(c=1)
        FederationConfig(c=1, allow_single_client=True)
        with self.assertRaises(ConfigError):
            FederationConfig(rounds=0)
        with self.assertRaises(ConfigError):
            FederationConfig(c=2, partition=(0.3, 0.3, 0.4))
        with self.assertRaises(ConfigError):
            FederationConfig(division="nowhere")
        with self.assertRaises(ConfigError):
            FederationConfig(learning_rate=-1.0)
        with self.assertRaises(ConfigError):
            FederationConfig(frac_bits=0)

    def test_encoding_follows_mode(self):
        self.assertIsNone(FederationConfig(mode=RunMode.PLAIN).encoding())
        enc = FederationConfig(c=5, mode=RunMode.SEC192, division=CLIENT_DIVISION, frac_bits=14).encoding()
        self.assertEqual((enc.frac_bits, enc.chain), (14, 5))

    def test_explicit_key_seed(self):
        self.assertEqual(FederationConfig(key_seed=11).effective_key_seed, 11)

    def test_mode_lookup(self):
        self.assertIs(RunMode.from_name(" sec192 "), RunMode.SEC192)
        self.assertFalse(RunMode.PLAIN.encrypted)
        self.assertIsNone(RunMode.PLAIN.level)
        with self.assertRaises(ConfigError):
            RunMode.from_name("SEC256")


class TestParseConfig(unittest.TestCase):
    def test_all_keys(self):
        cfg = parse_config({
            "clients": "5", "rounds": "2", "mode": "plain", "seed": "0x10", "key_seed": "9",
            "partition": "0.2,0.2,0.2,0.2,0.2", "division": "CLIENT", "timeout": "1.5",
            "learning_rate": "0.05", "epochs": "3", "batch_size": "16", "hidden_units": "4",
            "train_per_class": "100", "test_per_class": "20", "feature_dim": "3", "separation": "1.0",
        })
        self.assertEqual(cfg.c, 5)
        self.assertIs(cfg.mode, RunMode.PLAIN)
        self.assertEqual(cfg.seed, 16)
        self.assertEqual(cfg.partition, (0.2,) * 5)
        self.assertEqual(cfg.division, CLIENT_DIVISION)
        self.assertEqual(cfg.dataset.feature_dim, 3)
        self.assertEqual(cfg.train_config(4).batch_size, 16)

    def test_equal_partition(self):
        self.assertIsNone(parse_config({"partition": "equal"}).partition)

    def test_unknown_key(self):
        with self.assertRaises(ConfigError):
            parse_config({"colour": "blue"})

    def test_bad_value(self):
        with self.assertRaises(ConfigError):
            parse_config({"rounds": "five"})
        with self.assertRaises(ConfigError):
            parse_config({"feature_dim": "0"})

    def test_load_config_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "run.cfg")
            with open(path, "w", encoding="utf-8") as f:
                f.write("# two clients\nclients=2\nmode=SEC192\nrounds=1\n")
            cfg = load_config(path)
        self.assertEqual((cfg.c, cfg.mode, cfg.rounds), (2, RunMode.SEC192, 1))

    def test_shipped_default_run_file(self):
        path = os.path.join(os.path.dirname(__file__), "..", "run_configs", "default_run.cfg")
        self.assertIsInstance(load_config(path), FederationConfig)

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            load_config("/nonexistent/run.cfg")


class TestEnvironment(unittest.TestCase):
    def test_defaults(self):
        with patch.dict(os.environ, {}, clear=True):
            self.assertEqual(get_output_dir(), "results")
            self.assertEqual(get_listen_addr(), "127.0.0.1:8765")

    def test_overrides(self):
        with patch.dict(os.environ, {"FEDHE_OUTPUT_DIR": "/tmp/out", "FEDHE_LISTEN_ADDR": "0.0.0.0:9000"}):
            self.assertEqual(get_output_dir(), "/tmp/out")
            self.assertEqual(split_address(get_listen_addr()), ("0.0.0.0", 9000))

    def test_split_address(self):
        self.assertEqual(split_address(":8000"), ("127.0.0.1", 8000))
        with self.assertRaises(ConfigError):
            split_address("localhost")
        with self.assertRaises(ConfigError):
            split_address("localhost:http")


if __name__ == "__main__":
    unittest.main()
