"""TCP aggregation server.

One thread per client connection. Each session reads the client's HELLO,
then per round its MANIFEST and CHUNKS (or PLAIN_CHUNKS), hands them to the
shared RoundBarrier and answers with whatever the barrier resolved for that
round: AGGREGATE, PLAIN_CHUNKS or ERROR. The server is only ever given the
public key.
"""
from __future__ import annotations

import socketserver
import sys
import threading

from aggregator import new_server_state
from bfv import PublicKey
from errors import ErrorCode, FedHEError
from fed_config import FederationConfig
from round_barrier import RoundBarrier
from wire import PROTOCOL_VERSION, MessageTag, error_message, recv_message, send_message

_SUBMISSION_TAGS = (MessageTag.CHUNKS, MessageTag.PLAIN_CHUNKS, MessageTag.ERROR)


class _SessionHandler(socketserver.BaseRequestHandler):
    def handle(self):
        server: FederationServer = self.server
        sock = self.request
        sock.settimeout(server.cfg.timeout)
        client_id = None
        try:
            hello = recv_message(sock)
            if hello.tag is not MessageTag.HELLO:
                send_message(sock, error_message(hello.round, ErrorCode.BAD_PHASE, "expected HELLO"))
                return
            if hello.version != PROTOCOL_VERSION:
                print(f"[fed_server] client {hello.client_id} speaks protocol {hello.version}, rejecting", file=sys.stderr)
                send_message(sock, error_message(hello.round, ErrorCode.VERSION_MISMATCH,
                                                 f"server speaks protocol {PROTOCOL_VERSION}, got {hello.version}"))
                return
            client_id = hello.client_id
            print(f"[fed_server] client {client_id} connected from {self.client_address[0]}")

            for round_no in range(1, server.cfg.rounds + 1):
                messages = []
                while not messages or messages[-1].tag not in _SUBMISSION_TAGS:
                    messages.append(recv_message(sock))
                server.barrier.submit(client_id, messages)
                reply = server.barrier.wait_result(round_no)
                send_message(sock, reply)
                if reply.tag is MessageTag.ERROR:
                    return
            print(f"[fed_server] client {client_id} finished {server.cfg.rounds} rounds")
        except (OSError, FedHEError) as exc:
            print(f"[fed_server] session for client {client_id} ended: {type(exc).__name__}: {exc}", file=sys.stderr)
        finally:
            server.session_done()


class FederationServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], cfg: FederationConfig, key_pub: PublicKey | None,
                 stop_when_done: bool = True):
        self.cfg = cfg
        self.barrier = RoundBarrier(new_server_state(cfg, key_pub, cfg.encoding()), cfg.timeout)
        self._stop_when_done = stop_when_done
        self._finished = 0
        self._finished_lock = threading.Lock()
        super().__init__(address, _SessionHandler)

    def session_done(self):
        with self._finished_lock:
            self._finished += 1
            done = self._finished >= self.cfg.c
        if done and self._stop_when_done:
            # shutdown() blocks until serve_forever returns, so not from this thread
            threading.Thread(target=self.shutdown, daemon=True).start()


def serve(cfg: FederationConfig, key_pub: PublicKey | None, host: str, port: int) -> FederationServer:
    """Serve one federation of cfg.c clients, returning once every session ends."""
    with FederationServer((host, port), cfg, key_pub) as server:
        print(f"[fed_server] {cfg.mode.value} federation of {cfg.c} clients, "
              f"{cfg.rounds} rounds, listening on {host}:{server.server_address[1]}")
        server.serve_forever()
    return server
