"""In-process federation driver.

Runs every client and the server in one process, but every message still
goes through ``wire.encode_message``/``decode_message`` so the bytes match
the socket transport exactly. ``run_centralized`` is the pooled-data
baseline trained without any federation.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field

from aggregator import fedavg_mean, new_server_state, server_aggregate, server_next_round, server_receive
from encoder import EncodingConfig, WeightVector
from errors import FedHEError
from fed_config import FederationConfig
from model import Dataset, MLPModel, MetricsReport, compute_metrics, flatten_weights, load_weights, models_equal, predict, train_local
from protocol import client_apply, client_next_round, client_round, client_seed, deal_keys, global_model, new_client_state, round_train_seed
from ring import derive_seed
from synthetic_data import generate_dataset, partition, partition_by_fractions
from utils import dbg_print, phase_timer
from wire import MessageTag, decode_message, encode_message


@dataclass
class FederationResult:
    metrics: list = field(default_factory=list)
    timings: list = field(default_factory=list)
    models: list = field(default_factory=list)
    rounds_completed: int = 0
    error: str | None = None
    encoding: EncodingConfig | None = None

    @property
    def final_metrics(self) -> MetricsReport | None:
        return self.metrics[-1] if self.metrics else None

    def phase_totals(self) -> dict[str, float]:
        totals: dict[str, float] = {}
        for record in self.timings:
            totals[record["phase"]] = totals.get(record["phase"], 0.0) + record["seconds"]
        return totals


def client_shares(cfg: FederationConfig, train: Dataset) -> list[Dataset]:
    seed = derive_seed(cfg.seed, "shares")
    if cfg.partition is None:
        return partition(train, cfg.c, seed)
    return partition_by_fractions(train, list(cfg.partition), seed)


def load_data(cfg: FederationConfig) -> tuple[Dataset, Dataset]:
    return generate_dataset(cfg.dataset, derive_seed(cfg.seed, "data"))


@dbg_print
def run_federation(cfg: FederationConfig, data: tuple[Dataset, Dataset] | None = None) -> FederationResult:
    """Run ``cfg.rounds`` rounds and score the global model on the test set after each.

    A failed round stops the run; whatever finished before it stays in the
    result and ``error`` carries the diagnostic.
    """
    train, test = data if data is not None else load_data(cfg)
    encoding = cfg.encoding()
    result = FederationResult(encoding=encoding)
    keys = deal_keys(cfg.mode.level, cfg.effective_key_seed) if cfg.mode.encrypted else None

    server = new_server_state(cfg, keys.key_pub if keys else None, encoding)
    clients = [
        new_client_state(cfg, client_id, share, keys, encoding)
        for client_id, share in enumerate(client_shares(cfg, train))
    ]
    timings = result.timings

    for round_no in range(1, cfg.rounds + 1):
        try:
            for i, st in enumerate(clients):
                st, outgoing = client_round(st, cfg, timings)
                clients[i] = st
                with phase_timer(timings, "transfer", round=round_no, client=st.client_id):
                    incoming = [decode_message(encode_message(msg)) for msg in outgoing]
                for msg in incoming:
                    if msg.tag is MessageTag.ERROR:
                        raise msg.as_error()
                    server = server_receive(server, st.client_id, msg)

            server, reply = server_aggregate(server, timings)
            if reply.tag is MessageTag.ERROR:
                raise reply.as_error()
            with phase_timer(timings, "transfer", round=round_no):
                payload = encode_message(reply)
            for i, st in enumerate(clients):
                clients[i] = client_apply(st, decode_message(payload), timings)

            if not all(models_equal(clients[0].model, st.model) for st in clients[1:]):
                raise FedHEError(f"clients disagree on the global model after round {round_no}")
            report = compute_metrics(predict(clients[0].model, test.features), test.labels)
            result.metrics.append(report)
            result.rounds_completed = round_no
            print(f"[federation] {cfg.mode.value} c={cfg.c} round {round_no}/{cfg.rounds}: "
                  f"accuracy={report.accuracy:.4f} f1={report.f1:.4f}")

            clients = [client_next_round(st) for st in clients]
            server = server_next_round(server)
        except FedHEError as exc:
            result.error = f"round {round_no}: {exc}"
            print(f"[federation] aborted {cfg.mode.value} c={cfg.c}: {result.error}", file=sys.stderr)
            break

    result.models = [st.model for st in clients]
    return result


def fedavg_reference(cfg: FederationConfig, data: tuple[Dataset, Dataset] | None = None) -> list[MLPModel]:
    """Cleartext FedAvg in a single loop, no protocol machinery.

    Uses the same seeds, shares and order of summation as ``run_federation``,
    so a PLAIN run must reproduce the returned per-round models exactly.
    """
    train, _ = data if data is not None else load_data(cfg)
    shares = client_shares(cfg, train)
    seeds = [client_seed(cfg, client_id) for client_id in range(cfg.c)]
    current = global_model(cfg)
    history = []
    for round_no in range(1, cfg.rounds + 1):
        vectors = []
        for share, seed in zip(shares, seeds):
            trained = train_local(current, share, cfg.train_config(round_train_seed(seed, round_no)))
            vector, manifest = flatten_weights(trained)
            vectors.append(vector.values)
        current = load_weights(current, WeightVector(fedavg_mean(vectors)), manifest)
        history.append(current)
    return history


@dbg_print
def run_centralized(cfg: FederationConfig, data: tuple[Dataset, Dataset] | None = None) -> list[MetricsReport]:
    """Non-federated baseline: the round-one model trained on the pooled training set.

    Gets the same budget as a federation run, ``cfg.rounds`` passes of
    ``cfg.epochs`` epochs, and is scored on the test set after each pass.
    """
    train, test = data if data is not None else load_data(cfg)
    seed = derive_seed(cfg.seed, "centralized")
    model = global_model(cfg)
    metrics = []
    for round_no in range(1, cfg.rounds + 1):
        model = train_local(model, train, cfg.train_config(round_train_seed(seed, round_no)))
        metrics.append(compute_metrics(predict(model, test.features), test.labels))
    print(f"[federation] centralized baseline: accuracy={metrics[-1].accuracy:.4f} f1={metrics[-1].f1:.4f}")
    return metrics
