"""Client side of the federation: the per-round state machine and the key dealer.

A client moves IDLE -> TRAINED -> SENT -> UPDATED and back to IDLE for the
next round. Each transition returns a new ClientState; the previous state is
never modified, so a rejected message leaves the caller holding the state it
had before.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

from bfv import KeyPair, SecurityLevel, decrypt, deserialize_ciphertext, encrypt, keygen, serialize_ciphertext
from encoder import CLIENT_DIVISION, EncodingConfig, WeightManifest, WeightVector, decode_fractional, encode_fractional
from errors import EncodingRangeError, ErrorCode, ProtocolError
from fed_config import FederationConfig
from model import Dataset, MLPModel, flatten_weights, init_model, load_weights, train_local
from ring import RandomSource, derive_seed
from utils import dbg_print, phase_timer
from wire import Message, MessageTag, chunks_message, error_message, manifest_message, plain_chunks_message


class ClientPhase(Enum):
    IDLE = "idle"
    TRAINED = "trained"
    SENT = "sent"
    UPDATED = "updated"


@dataclass(frozen=True, eq=False)
class ClientState:
    client_id: int
    model: MLPModel
    local_data: Dataset
    seed: int
    # encryption randomness; drawn from the dealer seed so it varies per security level
    crypto_seed: int = 0
    # None in PLAIN mode
    keys: KeyPair | None = None
    encoding: EncodingConfig | None = None
    phase: ClientPhase = ClientPhase.IDLE
    round: int = 1
    manifest: WeightManifest | None = None
    # client count when the division by c happens after decryption, else 1
    divide_by: int = 1

    @property
    def plain(self) -> bool:
        return self.keys is None


def deal_keys(level: SecurityLevel, seed: int) -> KeyPair:
    """Trusted dealer: one key pair shared by every client, public half to the server."""
    return keygen(level, RandomSource(seed))


def client_seed(cfg: FederationConfig, client_id: int) -> int:
    return derive_seed(cfg.seed, f"client|{client_id}")


def round_train_seed(seed: int, round_no: int) -> int:
    return derive_seed(seed, f"train|{round_no}")


def global_model(cfg: FederationConfig) -> MLPModel:
    """Round-one model; every client starts from this same initialisation."""
    return init_model(cfg.dataset.feature_dim, cfg.hidden_units, derive_seed(cfg.seed, "global-model"))


def new_client_state(cfg: FederationConfig, client_id: int, local_data: Dataset,
                     keys: KeyPair | None = None, encoding: EncodingConfig | None = None,
                     seed: int | None = None) -> ClientState:
    if cfg.mode.encrypted and (keys is None or encoding is None):
        raise ProtocolError(ErrorCode.INTERNAL, f"{cfg.mode.value} clients need keys and an encoding")
    return ClientState(
        client_id=client_id,
        model=global_model(cfg),
        local_data=local_data,
        seed=client_seed(cfg, client_id) if seed is None else seed,
        crypto_seed=derive_seed(cfg.effective_key_seed, f"client|{client_id}"),
        keys=keys if cfg.mode.encrypted else None,
        encoding=encoding if cfg.mode.encrypted else None,
        divide_by=cfg.c if cfg.mode.encrypted and cfg.division == CLIENT_DIVISION else 1,
    )


def _require_phase(st: ClientState, phase: ClientPhase):
    if st.phase is not phase:
        raise ProtocolError(ErrorCode.BAD_PHASE, f"client {st.client_id} is {st.phase.value}, expected {phase.value}")


@dbg_print
def client_round(st: ClientState, cfg: FederationConfig, timings: list | None = None) -> tuple[ClientState, list[Message]]:
    """Train locally, then emit MANIFEST plus CHUNKS (or PLAIN_CHUNKS).

    An encoding range failure does not raise; the round is abandoned with a
    single ERROR message and the client is left TRAINED.
    """
    _require_phase(st, ClientPhase.IDLE)
    timings = [] if timings is None else timings
    labels = {"round": st.round, "client": st.client_id}

    with phase_timer(timings, "train", **labels):
        model = train_local(st.model, st.local_data, cfg.train_config(round_train_seed(st.seed, st.round)))
    trained = replace(st, model=model, phase=ClientPhase.TRAINED)
    vector, manifest = flatten_weights(model)

    if st.plain:
        body = plain_chunks_message(st.round, vector.values)
    else:
        with phase_timer(timings, "encrypt", **labels):
            try:
                chunks = encode_fractional(vector, st.encoding)
            except EncodingRangeError as exc:
                print(f"[protocol] client {st.client_id} round {st.round}: {exc}")
                return trained, [error_message(st.round, ErrorCode.ENCODING_RANGE, str(exc))]
            source = RandomSource(derive_seed(st.crypto_seed, f"encrypt|{st.round}"))
            frames = [serialize_ciphertext(encrypt(chunk, st.keys.key_pub, source)) for chunk in chunks]
        body = chunks_message(st.round, frames)

    sent = replace(trained, phase=ClientPhase.SENT, manifest=manifest)
    return sent, [manifest_message(st.round, manifest), body]


@dbg_print
def client_apply(st: ClientState, msg: Message, timings: list | None = None) -> ClientState:
    """Load the aggregate into the local model; it becomes the next round's global model."""
    _require_phase(st, ClientPhase.SENT)
    if msg.round != st.round:
        raise ProtocolError(ErrorCode.STALE_ROUND, f"client {st.client_id} is in round {st.round}, got round {msg.round}")
    if msg.tag is MessageTag.ERROR:
        raise msg.as_error()

    expected = MessageTag.PLAIN_CHUNKS if st.plain else MessageTag.AGGREGATE
    if msg.tag is not expected:
        raise ProtocolError(ErrorCode.BAD_PHASE, f"expected {expected.name}, got {MessageTag(msg.tag).name}")

    timings = [] if timings is None else timings
    if st.plain:
        vector = WeightVector(msg.values)
    else:
        with phase_timer(timings, "decrypt", round=st.round, client=st.client_id):
            level = st.keys.key_priv.level
            plaintexts = [decrypt(deserialize_ciphertext(frame, level), st.keys.key_priv) for frame in msg.frames]
            vector = decode_fractional(plaintexts, st.manifest.total, st.encoding)
        if st.divide_by > 1:
            vector = WeightVector(vector.values / st.divide_by)

    model = load_weights(st.model, vector, st.manifest)
    return replace(st, model=model, phase=ClientPhase.UPDATED)


def client_next_round(st: ClientState) -> ClientState:
    _require_phase(st, ClientPhase.UPDATED)
    return replace(st, phase=ClientPhase.IDLE, round=st.round + 1, manifest=None)
