"""End-to-end socket tests: a FederationServer on an ephemeral port plus threaded clients."""
import socket
import threading
import unittest
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from aggregator import new_server_state
from encoder import CLIENT_DIVISION, ManifestEntry, WeightManifest
from errors import ErrorCode
from fed_client import run_client
from fed_config import FederationConfig, RunMode
from fed_server import FederationServer
from federation import client_shares, fedavg_reference, load_data
from model import flatten_weights, models_equal
from protocol import deal_keys
from round_barrier import RoundBarrier
from synthetic_data import SyntheticDatasetSpec
from wire import MessageTag, hello_message, manifest_message, plain_chunks_message, recv_message, send_message

SMALL_DATA = SyntheticDatasetSpec(train_per_class=40, test_per_class=20, feature_dim=4)


def small_config(**changes) -> FederationConfig:
    base = dict(c=3, rounds=2, mode=RunMode.PLAIN, epochs=2, hidden_units=4, dataset=SMALL_DATA,
                seed=5, timeout=30.0)
    base.update(changes)
    return FederationConfig(**base)


def submission(round_no, values):
    manifest = WeightManifest((ManifestEntry("w", (len(values),), 0, len(values)),))
    return [manifest_message(round_no, manifest), plain_chunks_message(round_no, values)]


class ServerThread:
    def __init__(self, cfg, key_pub=None, stop_when_done=True):
        self.server = FederationServer(("127.0.0.1", 0), cfg, key_pub, stop_when_done)
        self.port = self.server.server_address[1]
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()
        self.thread.join(timeout=5)


class TestFederationServer(unittest.TestCase):
    def run_clients(self, cfg, keys=None):
        train, _ = load_data(cfg)
        shares = client_shares(cfg, train)
        with ServerThread(cfg, keys.key_pub if keys else None, stop_when_done=False) as running:
            with ThreadPoolExecutor(max_workers=cfg.c) as pool:
                futures = [pool.submit(run_client, "127.0.0.1", running.port, cfg, i, shares[i], keys)
                           for i in range(cfg.c)]
                return [f.result(timeout=120) for f in futures]

    def test_plain_clients_match_reference(self):
        cfg = small_config()
        states = self.run_clients(cfg)
        reference = fedavg_reference(cfg)[-1]
        for st in states:
            self.assertEqual(st.round, cfg.rounds + 1)
            self.assertTrue(models_equal(st.model, reference))

    def test_encrypted_clients_agree(self):
        cfg = small_config(c=2, rounds=1, mode=RunMode.SEC192, division=CLIENT_DIVISION, frac_bits=14)
        keys = deal_keys(cfg.mode.level, cfg.effective_key_seed)
        states = self.run_clients(cfg, keys)
        self.assertTrue(models_equal(states[0].model, states[1].model))
        got = flatten_weights(states[0].model)[0].values
        want = flatten_weights(fedavg_reference(cfg)[-1])[0].values
        self.assertLessEqual(np.max(np.abs(got - want)), 1e-3)

    def test_version_mismatch(self):
        cfg = small_config()
        with ServerThread(cfg, stop_when_done=False) as running:
            with socket.create_connection(("127.0.0.1", running.port), timeout=10) as sock:
                send_message(sock, hello_message(1, 0, version=99))
                reply = recv_message(sock)
        self.assertIs(reply.tag, MessageTag.ERROR)
        self.assertEqual(reply.code, int(ErrorCode.VERSION_MISMATCH))

    def test_first_message_must_be_hello(self):
        cfg = small_config()
        with ServerThread(cfg, stop_when_done=False) as running:
            with socket.create_connection(("127.0.0.1", running.port), timeout=10) as sock:
                send_message(sock, submission(1, [1.0])[0])
                reply = recv_message(sock)
        self.assertEqual(reply.code, int(ErrorCode.BAD_PHASE))


class TestRoundBarrier(unittest.TestCase):
    def setUp(self):
        self.cfg = small_config(c=2)
        self.barrier = RoundBarrier(new_server_state(self.cfg, None, None), timeout=0.2)

    def test_aggregates_once_every_client_submitted(self):
        results = {}

        def session(client_id, values):
            self.barrier.submit(client_id, submission(1, values))
            results[client_id] = self.barrier.wait_result(1, timeout=10)

        threads = [threading.Thread(target=session, args=(i, v)) for i, v in enumerate(([1.0, 2.0], [3.0, 4.0]))]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for reply in results.values():
            self.assertIs(reply.tag, MessageTag.PLAIN_CHUNKS)
            np.testing.assert_array_equal(reply.values, [2.0, 3.0])
        self.assertEqual(self.barrier.state.round, 2)
        self.assertIn("aggregate", {t["phase"] for t in self.barrier.timings})

    def test_timeout_fails_the_round(self):
        self.barrier.submit(0, submission(1, [1.0, 2.0]))
        reply = self.barrier.wait_result(1)
        self.assertIs(reply.tag, MessageTag.ERROR)
        self.assertEqual(reply.code, int(ErrorCode.INCOMPLETE_ROUND))
        self.assertTrue(self.barrier.failed)
        self.assertEqual(self.barrier.state.round, 1)

    def test_protocol_error_fails_the_round(self):
        self.barrier.submit(0, submission(1, [1.0, 2.0]))
        self.barrier.submit(0, submission(1, [1.0, 2.0]))
        reply = self.barrier.wait_result(1)
        self.assertEqual(reply.code, int(ErrorCode.BAD_PHASE))

    def test_stale_submission_is_dropped(self):
        self.barrier.submit(0, submission(7, [1.0, 2.0]))
        self.assertFalse(self.barrier.failed)
        self.assertEqual(self.barrier.state.received, {})


if __name__ == "__main__":
    unittest.main()
