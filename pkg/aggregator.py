"""Server side of the federation: collect submissions, fold them, reply.

The server only ever holds the public key. Aggregation is ciphertext
addition in ascending client-id order followed by one plaintext multiply by
encode(1/c); in PLAIN mode it is the arithmetic mean of the cleartext
vectors, summed in the same order.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from functools import reduce

import numpy as np

from bfv import PublicKey, deserialize_ciphertext, he_add, he_plain_mul, serialize_ciphertext
from encoder import SERVER_DIVISION, EncodingConfig, encode_reciprocal
from errors import ErrorCode, FedHEError, ProtocolError, ScaleMismatchError
from fed_config import FederationConfig
from utils import dbg_print, phase_timer
from wire import Message, MessageTag, aggregate_message, error_message, plain_chunks_message


class ServerPhase(Enum):
    COLLECTING = "collecting"
    AGGREGATED = "aggregated"


@dataclass(frozen=True, eq=False)
class ServerState:
    expected: int
    key_pub: PublicKey | None = None
    encoding: EncodingConfig | None = None
    divide_on_server: bool = True
    round: int = 1
    phase: ServerPhase = ServerPhase.COLLECTING
    manifests: dict = field(default_factory=dict)
    received: dict = field(default_factory=dict)

    @property
    def plain(self) -> bool:
        return self.key_pub is None

    @property
    def ready(self) -> bool:
        return len(self.received) == self.expected and set(self.received) <= set(self.manifests)


def new_server_state(cfg: FederationConfig, key_pub: PublicKey | None, encoding: EncodingConfig | None) -> ServerState:
    if cfg.mode.encrypted and (key_pub is None or encoding is None):
        raise ProtocolError(ErrorCode.INTERNAL, f"{cfg.mode.value} server needs the public key and an encoding")
    if cfg.mode.encrypted and cfg.division == SERVER_DIVISION and encoding.clients != cfg.c:
        raise ProtocolError(ErrorCode.INTERNAL, f"encoding divides by {encoding.clients}, run has {cfg.c} clients")
    return ServerState(
        expected=cfg.c,
        key_pub=key_pub if cfg.mode.encrypted else None,
        encoding=encoding if cfg.mode.encrypted else None,
        divide_on_server=cfg.division == SERVER_DIVISION,
    )


def fedavg_mean(vectors) -> np.ndarray:
    """Element-wise mean, summed left to right then divided once."""
    vectors = [np.asarray(v, dtype=np.float64) for v in vectors]
    total = vectors[0].copy()
    for v in vectors[1:]:
        total = total + v
    return total / len(vectors)


def server_receive(st: ServerState, client_id: int, msg: Message) -> ServerState:
    """Record one MANIFEST or chunk submission from *client_id*."""
    if msg.round != st.round:
        raise ProtocolError(ErrorCode.STALE_ROUND, f"server is in round {st.round}, client {client_id} sent round {msg.round}")
    if st.phase is not ServerPhase.COLLECTING:
        raise ProtocolError(ErrorCode.BAD_PHASE, f"round {st.round} is already aggregated")
    if not 0 <= client_id < st.expected:
        raise ProtocolError(ErrorCode.INTERNAL, f"client id {client_id} outside 0..{st.expected - 1}")

    if msg.tag is MessageTag.ERROR:
        raise msg.as_error()
    if msg.tag is MessageTag.MANIFEST:
        if client_id in st.manifests:
            raise ProtocolError(ErrorCode.BAD_PHASE, f"client {client_id} already sent a manifest for round {st.round}")
        return replace(st, manifests={**st.manifests, client_id: msg.manifest})

    expected = MessageTag.PLAIN_CHUNKS if st.plain else MessageTag.CHUNKS
    if msg.tag is not expected:
        raise ProtocolError(ErrorCode.BAD_PHASE, f"expected {expected.name} from client {client_id}, got {MessageTag(msg.tag).name}")
    if client_id in st.received:
        raise ProtocolError(ErrorCode.BAD_PHASE, f"client {client_id} already submitted round {st.round}")
    payload = msg.values if st.plain else msg.frames
    return replace(st, received={**st.received, client_id: payload})


def _fold_encrypted(st: ServerState, ids: list[int]) -> tuple:
    per_client = {i: [deserialize_ciphertext(frame, st.key_pub.level) for frame in st.received[i]] for i in ids}
    counts = {len(chunks) for chunks in per_client.values()}
    if len(counts) != 1:
        raise ProtocolError(ErrorCode.MANIFEST_DIVERGENCE, f"clients sent differing chunk counts {sorted(counts)}")

    reciprocal = encode_reciprocal(st.encoding) if st.divide_on_server else None
    frames = []
    for index in range(counts.pop()):
        acc = reduce(he_add, (per_client[i][index] for i in ids))
        if reciprocal is not None:
            acc = he_plain_mul(acc, reciprocal)
        frames.append(serialize_ciphertext(acc))
    return tuple(frames)


@dbg_print
def server_aggregate(st: ServerState, timings: list | None = None) -> tuple[ServerState, Message]:
    """Fold every submission of the current round into one AGGREGATE (or PLAIN_CHUNKS) reply.

    Failures come back as an ERROR message and leave the state untouched.
    """
    if st.phase is not ServerPhase.COLLECTING:
        return st, error_message(st.round, ErrorCode.BAD_PHASE, f"round {st.round} is already aggregated")
    if not st.ready:
        missing = sorted(set(range(st.expected)) - (set(st.received) & set(st.manifests)))
        return st, error_message(st.round, ErrorCode.INCOMPLETE_ROUND, f"round {st.round} is missing clients {missing}")

    ids = sorted(st.received)
    first = st.manifests[ids[0]]
    diverging = [i for i in ids if st.manifests[i] != first]
    if diverging:
        return st, error_message(st.round, ErrorCode.MANIFEST_DIVERGENCE, f"clients {diverging} disagree with client {ids[0]}'s manifest")

    timings = [] if timings is None else timings
    try:
        with phase_timer(timings, "aggregate", round=st.round):
            if st.plain:
                sizes = {np.asarray(st.received[i]).size for i in ids}
                if len(sizes) != 1:
                    raise ProtocolError(ErrorCode.MANIFEST_DIVERGENCE, f"clients sent differing vector lengths {sorted(sizes)}")
                reply = plain_chunks_message(st.round, fedavg_mean(st.received[i] for i in ids))
            else:
                reply = aggregate_message(st.round, _fold_encrypted(st, ids))
    except ProtocolError as exc:
        return st, error_message(st.round, exc.code, exc.text)
    except ScaleMismatchError as exc:
        return st, error_message(st.round, ErrorCode.SCALE_MISMATCH, str(exc))
    except FedHEError as exc:
        return st, error_message(st.round, ErrorCode.INTERNAL, str(exc))
    return replace(st, phase=ServerPhase.AGGREGATED), reply


def server_next_round(st: ServerState) -> ServerState:
    if st.phase is not ServerPhase.AGGREGATED:
        raise ProtocolError(ErrorCode.BAD_PHASE, f"round {st.round} has not been aggregated")
    return replace(st, round=st.round + 1, phase=ServerPhase.COLLECTING, manifests={}, received={})
