import os
import tempfile
import unittest

from click.testing import CliRunner

from bfv import SecurityLevel, load_public_key, load_secret_key
from fedhe import cli
from synthetic_data import load_dataset

RUN_FILE = """\
clients=2
mode=SEC192
rounds=1
epochs=1
hidden_units=2
train_per_class=20
test_per_class=5
feature_dim=3
"""


class TestCli(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.config = os.path.join(self.tmp.name, "run.cfg")
        with open(self.config, "w", encoding="utf-8") as f:
            f.write(RUN_FILE)
        self.runner = CliRunner()

    def tearDown(self):
        self.tmp.cleanup()

    def test_gen_data_writes_shards(self):
        out = os.path.join(self.tmp.name, "data")
        result = self.runner.invoke(cli, ["gen-data", "--config", self.config, "--out-dir", out])
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertEqual(len(load_dataset(os.path.join(out, "train.csv"))), 40)
        self.assertEqual(len(load_dataset(os.path.join(out, "test.csv"))), 10)
        shard_sizes = [len(load_dataset(os.path.join(out, f"shard_{i}.csv"))) for i in range(2)]
        self.assertEqual(shard_sizes, [20, 20])

    def test_deal_keys_writes_matching_pair(self):
        out = os.path.join(self.tmp.name, "keys")
        result = self.runner.invoke(cli, ["deal-keys", "--config", self.config, "--out-dir", out])
        self.assertEqual(result.exit_code, 0, result.output)
        key_pub = load_public_key(os.path.join(out, "public.key"))
        key_priv = load_secret_key(os.path.join(out, "secret.key"))
        self.assertEqual(key_pub.level, SecurityLevel.SEC192.params)
        self.assertEqual(key_priv.level, key_pub.level)

    def test_bad_config_is_reported(self):
        with open(self.config, "a", encoding="utf-8") as f:
            f.write("colour=blue\n")
        result = self.runner.invoke(cli, ["gen-data", "--config", self.config])
        self.assertNotEqual(result.exit_code, 0)
        self.assertIn("unknown config key", result.output)

    def test_run_grid(self):
        out = os.path.join(self.tmp.name, "results")
        result = self.runner.invoke(cli, [
            "run-grid", "--config", self.config, "--out-dir", out,
            "--clients", "2", "--modes", "PLAIN,SEC192", "--repetitions", "1",
        ])
        self.assertEqual(result.exit_code, 0, result.output)
        for name in ("metrics.csv", "timings.csv", "baseline.csv", "aggregate_times.dat", "run-meta.txt"):
            self.assertTrue(os.path.isfile(os.path.join(out, name)), name)

    def test_run_grid_without_baseline(self):
        out = os.path.join(self.tmp.name, "no-baseline")
        result = self.runner.invoke(cli, [
            "run-grid", "--config", self.config, "--out-dir", out,
            "--clients", "2", "--modes", "PLAIN", "--repetitions", "1", "--no-baseline",
        ])
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertTrue(os.path.isfile(os.path.join(out, "metrics.csv")))
        self.assertFalse(os.path.exists(os.path.join(out, "baseline.csv")))

    def test_unknown_mode(self):
        result = self.runner.invoke(cli, ["run-grid", "--config", self.config, "--modes", "SEC512"])
        self.assertNotEqual(result.exit_code, 0)


if __name__ == "__main__":
    unittest.main()
