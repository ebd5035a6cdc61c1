import socket
import struct
import unittest

import numpy as np

from encoder import ManifestEntry, WeightManifest
from errors import ErrorCode, WireFormatError
from wire import (
    MAX_FRAME,
    PROTOCOL_VERSION,
    MessageTag,
    aggregate_message,
    chunks_message,
    decode_message,
    encode_message,
    error_message,
    hello_message,
    manifest_message,
    plain_chunks_message,
    recv_frame,
    recv_message,
    send_frame,
    send_message,
)

MANIFEST = WeightManifest((
    ManifestEntry("dense_1/weights", (8, 16), 0, 128),
    ManifestEntry("dense_1/bias", (16,), 128, 16),
))


class TestCodec(unittest.TestCase):
    def test_hello(self):
        msg = decode_message(encode_message(hello_message(3, 4)))
        self.assertEqual((msg.round, msg.tag, msg.client_id, msg.version), (3, MessageTag.HELLO, 4, PROTOCOL_VERSION))

    def test_header_layout(self):
        data = encode_message(hello_message(7, 2))
        self.assertEqual(struct.unpack("<IB", data[:5]), (7, int(MessageTag.HELLO)))

    def test_manifest(self):
        msg = decode_message(encode_message(manifest_message(1, MANIFEST)))
        self.assertEqual(msg.manifest, MANIFEST)

    def test_chunks_and_aggregate_keep_frame_order(self):
        frames = [b"first", b"", b"third" * 100]
        for build, tag in ((chunks_message, MessageTag.CHUNKS), (aggregate_message, MessageTag.AGGREGATE)):
            msg = decode_message(encode_message(build(2, frames)))
            self.assertIs(msg.tag, tag)
            self.assertEqual(msg.frames, tuple(frames))

    def test_plain_chunks_are_bit_exact(self):
        values = np.array([0.1, -2.5, np.pi, 1e-300])
        msg = decode_message(encode_message(plain_chunks_message(1, values)))
        np.testing.assert_array_equal(msg.values, values)

    def test_error(self):
        msg = decode_message(encode_message(error_message(5, ErrorCode.STALE_ROUND, "late")))
        self.assertEqual((msg.code, msg.text), (int(ErrorCode.STALE_ROUND), "late"))
        exc = msg.as_error()
        self.assertEqual(exc.code, ErrorCode.STALE_ROUND)

    def test_unknown_error_code_maps_to_internal(self):
        msg = decode_message(encode_message(error_message(1, ErrorCode.INTERNAL, "x")))
        self.assertEqual(msg.as_error().code, ErrorCode.INTERNAL)
        raw = struct.pack("<IB", 1, int(MessageTag.ERROR)) + struct.pack("<HH", 999, 0)
        self.assertEqual(decode_message(raw).as_error().code, ErrorCode.INTERNAL)


class TestMalformed(unittest.TestCase):
    def test_truncated(self):
        data = encode_message(manifest_message(1, MANIFEST))
        for cut in (0, 3, 5, len(data) - 1):
            with self.assertRaises(WireFormatError):
                decode_message(data[:cut])

    def test_trailing_bytes(self):
        with self.assertRaises(WireFormatError):
            decode_message(encode_message(hello_message(1, 0)) + b"\x00")

    def test_unknown_tag(self):
        with self.assertRaises(WireFormatError):
            decode_message(struct.pack("<IB", 1, 99))

    def test_frame_length_beyond_body(self):
        raw = struct.pack("<IB", 1, int(MessageTag.CHUNKS)) + struct.pack("<II", 1, 50) + b"short"
        with self.assertRaises(WireFormatError):
            decode_message(raw)


class TestFraming(unittest.TestCase):
    def setUp(self):
        self.left, self.right = socket.socketpair()

    def tearDown(self):
        self.left.close()
        self.right.close()

    def test_messages_cross_a_socket_in_order(self):
        send_message(self.left, hello_message(1, 2))
        send_message(self.left, manifest_message(1, MANIFEST))
        self.assertIs(recv_message(self.right).tag, MessageTag.HELLO)
        self.assertEqual(recv_message(self.right).manifest, MANIFEST)

    def test_length_prefix(self):
        send_frame(self.left, b"abc")
        self.assertEqual(self.right.recv(7), struct.pack("<I", 3) + b"abc")

    def test_closed_mid_frame(self):
        self.left.sendall(struct.pack("<I", 10) + b"abc")
        self.left.close()
        with self.assertRaises(ConnectionError):
            recv_frame(self.right)

    def test_oversized_announcement(self):
        self.left.sendall(struct.pack("<I", MAX_FRAME + 1))
        with self.assertRaises(WireFormatError):
            recv_frame(self.right)


if __name__ == "__main__":
    unittest.main()
