from __future__ import annotations

import sys
import threading
import time

from aggregator import ServerState, server_aggregate, server_next_round, server_receive
from errors import ErrorCode, ProtocolError
from wire import Message, MessageTag, error_message


class RoundBarrier:
    """Funnels concurrent client sessions into one ServerState.

    Sessions call ``submit`` with a client's messages for a round and then
    block in ``wait_result``. The last submission of a round runs
    ``server_aggregate`` under the lock and wakes everyone; a session that
    waits past the timeout fails the round for all of them.
    """

    def __init__(self, state: ServerState, timeout: float = 60.0):
        self.timeout = timeout
        self.timings: list[dict] = []
        self._state = state
        self._results: dict[int, Message] = {}
        self._failed: Message | None = None
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)

    @property
    def state(self) -> ServerState:
        with self._lock:
            return self._state

    @property
    def failed(self) -> bool:
        with self._lock:
            return self._failed is not None

    def submit(self, client_id: int, messages: list[Message]) -> None:
        with self._cond:
            if self._failed is not None:
                return
            try:
                state = self._state
                for msg in messages:
                    state = server_receive(state, client_id, msg)
            except ProtocolError as exc:
                round_no = messages[0].round if messages else self._state.round
                print(f"[round_barrier] client {client_id}: {exc}", file=sys.stderr)
                if exc.code is not ErrorCode.STALE_ROUND:
                    self._fail(error_message(round_no, exc.code, f"client {client_id}: {exc.text}"))
                return

            self._state = state
            if state.ready:
                state, reply = server_aggregate(state, self.timings)
                if reply.tag is MessageTag.ERROR:
                    self._fail(reply)
                    return
                self._results[reply.round] = reply
                self._state = server_next_round(state)
                print(f"[round_barrier] round {reply.round} aggregated over {state.expected} clients")
                self._cond.notify_all()

    def wait_result(self, round_no: int, timeout: float | None = None) -> Message:
        """Block until round *round_no* resolves; ERROR(INCOMPLETE_ROUND) on timeout."""
        timeout = self.timeout if timeout is None else timeout
        deadline = time.monotonic() + timeout
        with self._cond:
            while round_no not in self._results and self._failed is None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    missing = sorted(set(range(self._state.expected)) - set(self._state.received))
                    self._fail(error_message(
                        round_no, ErrorCode.INCOMPLETE_ROUND,
                        f"round {round_no} timed out after {timeout:g}s waiting for clients {missing}",
                    ))
                    break
                self._cond.wait(remaining)
            if round_no in self._results:
                return self._results[round_no]
            return self._failed

    def _fail(self, reply: Message) -> None:
        # caller holds the lock
        if self._failed is None:
            print(f"[round_barrier] round {reply.round} aborted: {reply.text}", file=sys.stderr)
            self._failed = reply
        self._cond.notify_all()
