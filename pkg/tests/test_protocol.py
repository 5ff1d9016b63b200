"""Wire-level guarantees: bit-exact framing, MAC rejection, single-use
indices, key-server ledger linearizability, and latency injection."""

import concurrent.futures
import math
import threading

import numpy as np
import pytest

from qkdscada.keypool import KeyPool
from qkdscada.protocol import (AsduMessage, BLOCK_BITS, GetKeyRequest,
                               KeyServer, KeysResponse, KeyStore, MODE_AES,
                               MODE_OTP, MacMismatchError, RefusalResponse,
                               StatusRequest, StatusResponse,
                               TruncatedFrameError, UnknownKeyIndexError,
                               UnknownModeError, decode_frame, decode_message,
                               encode_frame, encode_message,
                               key_server_roundtrip, message_key_cost,
                               serve_udp, synth_block, udp_roundtrip)
from qkdscada.protocol.latency import DROPPED, LatencyModel, inject_latency
from qkdscada.qlink import LinkState

# Frozen reference frames: regenerating them must reproduce these bytes
# exactly, or the wire contract has silently changed.
GOLDEN_ASDU = AsduMessage(type_id=45, cause_of_transmission=6,
                          common_address=0x0102,
                          info_object=bytes.fromhex("00400101ff"))
GOLDEN_OTP_BLOCK = bytes(range(32))
GOLDEN_AES_BLOCK = bytes.fromhex("000102030405060708090a0b0c0d0e0f"
                                 "101112131415161718191a1b1c1d1e1f")
GOLDEN_OTP_FRAME = ("0102000000000000000700092d07030104450706f70a86cebf4948"
                    "ef58271221a06f870634")
GOLDEN_AES_FRAME = ("010100000000499602d200097fe8bb7a1bcd0afe59388822feb3aa"
                    "cd3ae850cd962e5177ca")


def random_asdu(rng):
    n = int(rng.integers(0, 64))
    return AsduMessage(type_id=int(rng.integers(0, 256)),
                       cause_of_transmission=int(rng.integers(0, 256)),
                       common_address=int(rng.integers(0, 65536)),
                       info_object=bytes(rng.integers(0, 256, size=n, dtype=np.uint8)))


def store_with(index, block):
    store = KeyStore()
    store.add(index, block)
    return store


class TestMessageCost:
    def test_otp_scales_with_payload(self):
        assert message_key_cost(MODE_OTP, 64) == 512

    def test_aes_flat(self):
        for n in (1, 64, 249):
            assert message_key_cost(MODE_AES, n) == 128

    def test_otp_strictly_monotone(self):
        costs = [message_key_cost(MODE_OTP, n) for n in range(1, 250)]
        assert all(b > a for a, b in zip(costs, costs[1:]))

    def test_unknown_mode(self):
        with pytest.raises(UnknownModeError):
            message_key_cost(0x7F, 10)


class TestFrameRoundTrip:
    def test_thousand_random_asdus(self):
        rng = np.random.default_rng(99)
        for i in range(1000):
            asdu = random_asdu(rng)
            mode = MODE_OTP if i % 2 else MODE_AES
            if mode == MODE_OTP:
                # Pad streams are sized to the message.
                block = (synth_block(b"t", i) * 3)[:len(asdu.encode())]
            else:
                block = GOLDEN_AES_BLOCK
            frame = encode_frame(asdu, mode, block, key_index=i)
            out = decode_frame(frame, store_with(i, block))
            assert out == asdu

    def test_otp_zero_plaintext_exposes_keystream(self):
        asdu = AsduMessage(0, 0, 0, bytes(16))
        block = bytes(range(32))
        frame = encode_frame(asdu, MODE_OTP, block, key_index=1)
        payload = frame[12:-16]
        assert payload == block[:len(payload)]

    def test_golden_vectors_stable(self):
        f_otp = encode_frame(GOLDEN_ASDU, MODE_OTP, GOLDEN_OTP_BLOCK, key_index=7)
        f_aes = encode_frame(GOLDEN_ASDU, MODE_AES, GOLDEN_AES_BLOCK,
                             key_index=1234567890)
        assert f_otp.hex() == GOLDEN_OTP_FRAME
        assert f_aes.hex() == GOLDEN_AES_FRAME
        assert decode_frame(bytes.fromhex(GOLDEN_OTP_FRAME),
                            store_with(7, GOLDEN_OTP_BLOCK)) == GOLDEN_ASDU
        assert decode_frame(bytes.fromhex(GOLDEN_AES_FRAME),
                            store_with(1234567890, GOLDEN_AES_BLOCK)) == GOLDEN_ASDU

    def test_insufficient_key_material(self):
        from qkdscada.protocol import InsufficientKeyError
        asdu = AsduMessage(1, 2, 3, bytes(40))
        with pytest.raises(InsufficientKeyError):
            encode_frame(asdu, MODE_OTP, bytes(8), key_index=1)


class TestFrameRejection:
    def test_single_bit_flips_all_rejected(self):
        rng = np.random.default_rng(7)
        rejections = 0
        trials = 1000
        for i in range(trials):
            asdu = random_asdu(rng)
            block = (synth_block(b"flip", i) * 3)[:len(asdu.encode())]
            frame = bytearray(encode_frame(asdu, MODE_OTP, block, key_index=i))
            # Flip one random bit in the payload-or-mac region.
            pos = int(rng.integers(12, len(frame)))
            frame[pos] ^= 1 << int(rng.integers(0, 8))
            try:
                decode_frame(bytes(frame), store_with(i, block))
            except MacMismatchError:
                rejections += 1
        assert rejections == trials

    def test_random_tags_rejected(self):
        rng = np.random.default_rng(13)
        asdu = AsduMessage(1, 2, 3, b"\x01\x02")
        block = synth_block(b"tag", 0)
        frame = encode_frame(asdu, MODE_OTP, block, key_index=0)
        body = frame[:-16]
        for _ in range(10_000):
            tag = bytes(rng.integers(0, 256, size=16, dtype=np.uint8))
            with pytest.raises(MacMismatchError):
                decode_frame(body + tag, store_with(0, block))

    def test_truncation(self):
        with pytest.raises(TruncatedFrameError):
            decode_frame(bytes(27), lambda i: None)
        # Declared payload length inconsistent with actual size.
        frame = encode_frame(AsduMessage(1, 2, 3, b"\x00"), MODE_AES,
                             GOLDEN_AES_BLOCK, key_index=5)
        with pytest.raises(TruncatedFrameError):
            decode_frame(frame[:-1], store_with(5, GOLDEN_AES_BLOCK))

    def test_unknown_mode_and_index_distinguishable(self):
        frame = bytearray(encode_frame(AsduMessage(1, 2, 3, b"\x00"), MODE_AES,
                                       GOLDEN_AES_BLOCK, key_index=5))
        with pytest.raises(UnknownKeyIndexError):
            decode_frame(bytes(frame), store_with(6, GOLDEN_AES_BLOCK))
        frame[1] = 0x7F
        with pytest.raises(UnknownModeError):
            decode_frame(bytes(frame), store_with(5, GOLDEN_AES_BLOCK))

    def test_otp_index_single_use(self):
        asdu = AsduMessage(9, 9, 9, b"\xaa\xbb")
        block = synth_block(b"once", 3)
        frame = encode_frame(asdu, MODE_OTP, block, key_index=3)
        store = store_with(3, block)
        assert decode_frame(frame, store) == asdu
        with pytest.raises(UnknownKeyIndexError):
            decode_frame(frame, store)


class TestKeyServer:
    def make_server(self, initial=100_000):
        pool = KeyPool(initial, 1000, 5000, max(200_000, initial))
        return KeyServer(pool, material_seed=b"test-seed")

    def test_status_idempotent(self):
        server = self.make_server()
        a = key_server_roundtrip(server, StatusRequest())
        b = key_server_roundtrip(server, StatusRequest())
        assert a == b
        assert isinstance(a, StatusResponse)

    def test_getkey_debits_exactly(self):
        server = self.make_server(initial=100_000)
        reply = key_server_roundtrip(server, GetKeyRequest(2))
        assert isinstance(reply, KeysResponse)
        assert len(reply.keys) == 2
        status = key_server_roundtrip(server, StatusRequest())
        assert status.level == 100_000 - 2 * BLOCK_BITS

    def test_indices_strictly_increasing(self):
        server = self.make_server()
        first = key_server_roundtrip(server, GetKeyRequest(3))
        second = key_server_roundtrip(server, GetKeyRequest(3))
        indices = [i for i, _ in first.keys] + [i for i, _ in second.keys]
        assert indices == sorted(indices)
        assert len(set(indices)) == len(indices)

    def test_material_reproducible(self):
        server = self.make_server()
        reply = key_server_roundtrip(server, GetKeyRequest(1))
        index, block = reply.keys[0]
        assert block == synth_block(b"test-seed", index)

    def test_refusal_on_insufficiency(self):
        server = self.make_server(initial=100)
        reply = key_server_roundtrip(server, GetKeyRequest(1))
        assert isinstance(reply, RefusalResponse)
        assert reply.level == 100

    def test_wire_codec_round_trips(self):
        for msg in (GetKeyRequest(5), StatusRequest(),
                    KeysResponse(((1, bytes(32)), (2, bytes(32)))),
                    StatusResponse(12345, "normal"), RefusalResponse(77)):
            assert decode_message(encode_message(msg)) == msg

    def test_concurrent_storm_never_overdebits(self):
        # Linearizability stress: concurrent clients, exact final ledger.
        initial = 3_000_000
        server = self.make_server(initial=initial)
        granted = []
        lock = threading.Lock()

        def client(n_requests):
            local = 0
            for _ in range(n_requests):
                reply = server.get_key(1)
                if isinstance(reply, KeysResponse):
                    local += len(reply.keys)
            with lock:
                granted.append(local)

        with concurrent.futures.ThreadPoolExecutor(max_workers=8) as pool:
            futures = [pool.submit(client, 1250) for _ in range(8)]
            for f in futures:
                f.result()
        total_granted = sum(granted)
        ledger = server.pool.ledger()
        assert ledger["consumed"] == total_granted * BLOCK_BITS
        assert ledger["level"] == initial - total_granted * BLOCK_BITS
        assert ledger["generated"] == (ledger["level"] - ledger["initial"]
                                       + ledger["consumed"] + ledger["discarded"])

    def test_udp_transport_mode(self):
        server = self.make_server()
        udp = serve_udp(server, "127.0.0.1", 0)
        try:
            address = udp.server_address
            reply = udp_roundtrip(address, GetKeyRequest(1))
            assert isinstance(reply, KeysResponse)
            status = udp_roundtrip(address, StatusRequest())
            assert status.level == 100_000 - BLOCK_BITS
        finally:
            udp.shutdown()


class TestLatency:
    def test_zero_jitter_is_base(self):
        model = LatencyModel(base_latency=0.02, jitter_std=0.0)
        link = LinkState(time=0.0, eta=0.5, qber=0.02, broken=False, rate=1e5)
        rng = np.random.default_rng(0)
        assert inject_latency(model, link, rng) == 0.02

    def test_outage_drops(self):
        model = LatencyModel(base_latency=0.02, jitter_std=0.01)
        link = LinkState(time=0.0, eta=0.5, qber=0.02, broken=True, rate=0.0)
        assert inject_latency(model, link, np.random.default_rng(0)) == DROPPED

    def test_folded_jitter_moment(self):
        # E[base + max(0, N(0, s))] = base + s / sqrt(2 pi).
        base, s = 0.05, 0.02
        model = LatencyModel(base_latency=base, jitter_std=s)
        link = LinkState(time=0.0, eta=0.5, qber=0.02, broken=False, rate=1e5)
        rng = np.random.default_rng(21)
        n = 100_000
        mean = np.mean([inject_latency(model, link, rng) for _ in range(n)])
        expected = base + s / math.sqrt(2 * math.pi)
        assert mean == pytest.approx(expected, rel=0.02)
