"""Binary message codec and length-prefixed framing for the federation protocol.

Frame:    [u32 LE payload length] [payload]
Payload:  [u32 LE round] [u8 tag] [body]

Bodies (all integers little-endian):
  HELLO         u32 client id, u16 protocol version
  MANIFEST      u16 entry count, then per entry: u16 name length, name (utf-8),
                u8 ndim, ndim x u32 dims, u32 offset, u32 count
  CHUNKS        u32 frame count, then per frame: u32 length, serialized ciphertext
  AGGREGATE     same layout as CHUNKS
  PLAIN_CHUNKS  u32 value count, then float64 values
  ERROR         u16 code, u16 text length, text (utf-8)

The in-process federation and the socket transport both go through
encode_message/decode_message, so the bytes are identical either way.
"""
from __future__ import annotations

import socket
import struct
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from encoder import ManifestEntry, WeightManifest
from errors import ErrorCode, ProtocolError, WireFormatError

PROTOCOL_VERSION = 1
MAX_FRAME = 256 * 1024 * 1024

_LENGTH = struct.Struct("<I")
_HEADER = struct.Struct("<IB")
_HELLO = struct.Struct("<IH")
_ERROR = struct.Struct("<HH")


class MessageTag(IntEnum):
    HELLO = 1
    MANIFEST = 2
    CHUNKS = 3
    AGGREGATE = 4
    PLAIN_CHUNKS = 5
    ERROR = 6


@dataclass(frozen=True)
class Message:
    round: int
    tag: MessageTag
    client_id: int = 0
    version: int = PROTOCOL_VERSION
    manifest: WeightManifest | None = None
    frames: tuple = ()
    values: np.ndarray | None = field(default=None, compare=False)
    code: int = 0
    text: str = ""

    def as_error(self):
        """ProtocolError equivalent of an ERROR message."""
        try:
            code = ErrorCode(self.code)
        except ValueError:
            code = ErrorCode.INTERNAL
        return ProtocolError(code, self.text)


def hello_message(round_no: int, client_id: int, version: int = PROTOCOL_VERSION) -> Message:
    return Message(round_no, MessageTag.HELLO, client_id=client_id, version=version)


def manifest_message(round_no: int, manifest: WeightManifest) -> Message:
    return Message(round_no, MessageTag.MANIFEST, manifest=manifest)


def chunks_message(round_no: int, frames) -> Message:
    return Message(round_no, MessageTag.CHUNKS, frames=tuple(frames))


def aggregate_message(round_no: int, frames) -> Message:
    return Message(round_no, MessageTag.AGGREGATE, frames=tuple(frames))


def plain_chunks_message(round_no: int, values) -> Message:
    return Message(round_no, MessageTag.PLAIN_CHUNKS, values=np.asarray(values, dtype=np.float64).reshape(-1))


def error_message(round_no: int, code: ErrorCode, text: str) -> Message:
    return Message(round_no, MessageTag.ERROR, code=int(code), text=text)


# --- encoding -------------------------------------------------------------

def _encode_manifest(manifest: WeightManifest) -> bytes:
    out = [struct.pack("<H", len(manifest.entries))]
    for entry in manifest.entries:
        name = entry.name.encode("utf-8")
        out.append(struct.pack("<H", len(name)))
        out.append(name)
        out.append(struct.pack(f"<B{len(entry.shape)}I", len(entry.shape), *entry.shape))
        out.append(struct.pack("<II", entry.offset, entry.count))
    return b"".join(out)


def _encode_frames(frames) -> bytes:
    out = [_LENGTH.pack(len(frames))]
    for frame in frames:
        out.append(_LENGTH.pack(len(frame)))
        out.append(bytes(frame))
    return b"".join(out)


def encode_message(msg: Message) -> bytes:
    tag = MessageTag(msg.tag)
    if tag is MessageTag.HELLO:
        body = _HELLO.pack(msg.client_id, msg.version)
    elif tag is MessageTag.MANIFEST:
        body = _encode_manifest(msg.manifest)
    elif tag in (MessageTag.CHUNKS, MessageTag.AGGREGATE):
        body = _encode_frames(msg.frames)
    elif tag is MessageTag.PLAIN_CHUNKS:
        values = np.asarray(msg.values, dtype="<f8").reshape(-1)
        body = _LENGTH.pack(values.size) + values.tobytes()
    else:
        text = msg.text.encode("utf-8")[:0xFFFF]
        body = _ERROR.pack(msg.code, len(text)) + text
    return _HEADER.pack(msg.round, tag) + body


# --- decoding -------------------------------------------------------------

class _Reader:
    def __init__(self, data: bytes):
        self._data = memoryview(data)
        self._pos = 0

    def take(self, count: int) -> bytes:
        if count < 0 or self._pos + count > len(self._data):
            raise WireFormatError(f"message truncated at byte {self._pos}")
        chunk = self._data[self._pos:self._pos + count].tobytes()
        self._pos += count
        return chunk

    def unpack(self, fmt: str):
        layout = struct.Struct(fmt)
        return layout.unpack(self.take(layout.size))

    def finish(self):
        if self._pos != len(self._data):
            raise WireFormatError(f"{len(self._data) - self._pos} trailing bytes after message body")


def _decode_manifest(reader: _Reader) -> WeightManifest:
    (count,) = reader.unpack("<H")
    entries = []
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        try:
            name = reader.take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WireFormatError("manifest entry name is not valid utf-8") from exc
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I")
        offset, size = reader.unpack("<II")
        entries.append(ManifestEntry(name, tuple(shape), offset, size))
    return WeightManifest(tuple(entries))


def _decode_frames(reader: _Reader) -> tuple:
    (count,) = reader.unpack("<I")
    frames = []
    for _ in range(count):
        (size,) = reader.unpack("<I")
        frames.append(reader.take(size))
    return tuple(frames)


def decode_message(data: bytes) -> Message:
    reader = _Reader(data)
    round_no, raw_tag = reader.unpack(_HEADER.format)
    try:
        tag = MessageTag(raw_tag)
    except ValueError:
        raise WireFormatError(f"unknown message tag {raw_tag}") from None

    if tag is MessageTag.HELLO:
        client_id, version = reader.unpack(_HELLO.format)
        msg = Message(round_no, tag, client_id=client_id, version=version)
    elif tag is MessageTag.MANIFEST:
        msg = Message(round_no, tag, manifest=_decode_manifest(reader))
    elif tag in (MessageTag.CHUNKS, MessageTag.AGGREGATE):
        msg = Message(round_no, tag, frames=_decode_frames(reader))
    elif tag is MessageTag.PLAIN_CHUNKS:
        (count,) = reader.unpack("<I")
        values = np.frombuffer(reader.take(8 * count), dtype="<f8").astype(np.float64)
        msg = Message(round_no, tag, values=values)
    else:
        code, text_len = reader.unpack(_ERROR.format)
        msg = Message(round_no, tag, code=code, text=reader.take(text_len).decode("utf-8", errors="replace"))
    reader.finish()
    return msg


# --- framing over a stream socket -------------------------------------------

def send_frame(sock: socket.socket, payload: bytes):
    if len(payload) > MAX_FRAME:
        raise WireFormatError(f"frame of {len(payload)} bytes exceeds the {MAX_FRAME} byte limit")
    sock.sendall(_LENGTH.pack(len(payload)) + payload)


def _recv_exact(sock: socket.socket, count: int) -> bytes:
    buf = bytearray()
    while len(buf) < count:
        chunk = sock.recv(min(count - len(buf), 1 << 20))
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        buf.extend(chunk)
    return bytes(buf)


def recv_frame(sock: socket.socket) -> bytes:
    (length,) = _LENGTH.unpack(_recv_exact(sock, _LENGTH.size))
    if length > MAX_FRAME:
        raise WireFormatError(f"peer announced a {length} byte frame")
    return _recv_exact(sock, length)


def send_message(sock: socket.socket, msg: Message):
    send_frame(sock, encode_message(msg))


def recv_message(sock: socket.socket) -> Message:
    return decode_message(recv_frame(sock))
