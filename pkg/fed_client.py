"""Socket client: runs one ClientState through every round against a fed_server."""
from __future__ import annotations

import socket
import sys

from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_exponential

from bfv import KeyPair
from fed_config import FederationConfig
from model import Dataset, compute_metrics, predict
from protocol import ClientState, client_apply, client_next_round, client_round, new_client_state
from utils import dbg_print
from wire import MessageTag, hello_message, recv_message, send_message


@retry(
    retry=retry_if_exception_type(ConnectionError),
    stop=stop_after_attempt(8),
    wait=wait_exponential(multiplier=0.25, max=4),
    reraise=True,
)
def connect(host: str, port: int, timeout: float) -> socket.socket:
    # ConnectionRefusedError is a ConnectionError; the server may still be starting
    return socket.create_connection((host, port), timeout=timeout)


@dbg_print
def run_client(host: str, port: int, cfg: FederationConfig, client_id: int, shard: Dataset,
               keys: KeyPair | None = None, seed: int | None = None, test: Dataset | None = None) -> ClientState:
    """Connect, say HELLO, then train/submit/apply for cfg.rounds rounds."""
    st = new_client_state(cfg, client_id, shard, keys, cfg.encoding(), seed)
    with connect(host, port, cfg.timeout) as sock:
        send_message(sock, hello_message(st.round, client_id))
        for _ in range(cfg.rounds):
            st, outgoing = client_round(st, cfg)
            for msg in outgoing:
                send_message(sock, msg)
            if outgoing[-1].tag is MessageTag.ERROR:
                raise outgoing[-1].as_error()

            reply = recv_message(sock)
            if reply.tag is MessageTag.ERROR:
                error = reply.as_error()
                print(f"[fed_client] client {client_id} round {st.round} rejected: {error}", file=sys.stderr)
                raise error
            st = client_apply(st, reply)
            if test is not None:
                report = compute_metrics(predict(st.model, test.features), test.labels)
                print(f"[fed_client] client {client_id} round {st.round}: accuracy={report.accuracy:.4f} f1={report.f1:.4f}")
            else:
                print(f"[fed_client] client {client_id} round {st.round} applied")
            st = client_next_round(st)
    return st
