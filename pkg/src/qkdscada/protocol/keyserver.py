"""Key-delivery service over the shared pool, with a datagram wire format.

The server answers two requests: fetch n key blocks (debiting the pool)
or report the pool status. All pool mutations pass through one lock so
concurrent clients observe a linearizable ledger. Key material is
synthesized from a seeded stream — the simulator needs accounting
fidelity, not cryptographic entropy.

Wire format, big-endian: a 4-byte length prefix, a 1-byte opcode, then
the body. Opcodes: 0x01 get-key request (body: n, 4 bytes), 0x02 status
request (empty body), 0x81 keys response (count, then count x (8-byte
index + 32-byte block)), 0x82 status response (8-byte level + 1-byte
zone), 0x83 refusal (8-byte level).
"""

from __future__ import annotations

import hashlib
import socket
import socketserver
import threading
from dataclasses import dataclass

from ..keypool import KeyPool, NORMAL, PROTECT, RECONFIGURE

BLOCK_BYTES = 32
BLOCK_BITS = 256  # 128 cipher bits + 128 bits of MAC-derivation headroom

OP_GET_KEY = 0x01
OP_STATUS = 0x02
OP_KEYS = 0x81
OP_STATUS_REPLY = 0x82
OP_REFUSAL = 0x83

_ZONE_CODES = {NORMAL: 0, RECONFIGURE: 1, PROTECT: 2}
_ZONE_NAMES = {v: k for k, v in _ZONE_CODES.items()}


class WireFormatError(Exception):
    pass


@dataclass(frozen=True)
class GetKeyRequest:
    count: int


@dataclass(frozen=True)
class StatusRequest:
    pass


@dataclass(frozen=True)
class KeysResponse:
    keys: tuple[tuple[int, bytes], ...]


@dataclass(frozen=True)
class StatusResponse:
    level: int
    zone: str


@dataclass(frozen=True)
class RefusalResponse:
    level: int


def synth_block(seed: bytes, index: int) -> bytes:
    """Deterministic 32-byte key block for a given index."""
    return hashlib.sha256(seed + index.to_bytes(8, "big")).digest()


def encode_message(msg) -> bytes:
    if isinstance(msg, GetKeyRequest):
        if msg.count < 1:
            raise WireFormatError("get-key count must be at least 1")
        body = bytes([OP_GET_KEY]) + msg.count.to_bytes(4, "big")
    elif isinstance(msg, StatusRequest):
        body = bytes([OP_STATUS])
    elif isinstance(msg, KeysResponse):
        body = bytes([OP_KEYS]) + len(msg.keys).to_bytes(4, "big")
        for index, block in msg.keys:
            if len(block) != BLOCK_BYTES:
                raise WireFormatError(f"key block must be {BLOCK_BYTES} bytes")
            body += index.to_bytes(8, "big") + block
    elif isinstance(msg, StatusResponse):
        body = bytes([OP_STATUS_REPLY]) + msg.level.to_bytes(8, "big") \
            + bytes([_ZONE_CODES[msg.zone]])
    elif isinstance(msg, RefusalResponse):
        body = bytes([OP_REFUSAL]) + msg.level.to_bytes(8, "big")
    else:
        raise WireFormatError(f"unknown message type {type(msg).__name__}")
    return len(body).to_bytes(4, "big") + body


def decode_message(data: bytes):
    if len(data) < 5:
        raise WireFormatError("message below minimum length")
    declared = int.from_bytes(data[:4], "big")
    if declared != len(data) - 4:
        raise WireFormatError(f"length prefix {declared} != body length {len(data) - 4}")
    opcode = data[4]
    body = data[5:]
    if opcode == OP_GET_KEY:
        if len(body) != 4:
            raise WireFormatError("get-key body must be 4 bytes")
        return GetKeyRequest(int.from_bytes(body, "big"))
    if opcode == OP_STATUS:
        if body:
            raise WireFormatError("status request carries no body")
        return StatusRequest()
    if opcode == OP_KEYS:
        if len(body) < 4:
            raise WireFormatError("keys response truncated")
        count = int.from_bytes(body[:4], "big")
        if len(body) != 4 + count * (8 + BLOCK_BYTES):
            raise WireFormatError("keys response length mismatch")
        keys = []
        off = 4
        for _ in range(count):
            index = int.from_bytes(body[off:off + 8], "big")
            block = body[off + 8:off + 8 + BLOCK_BYTES]
            keys.append((index, block))
            off += 8 + BLOCK_BYTES
        return KeysResponse(tuple(keys))
    if opcode == OP_STATUS_REPLY:
        if len(body) != 9:
            raise WireFormatError("status reply body must be 9 bytes")
        zone = _ZONE_NAMES.get(body[8])
        if zone is None:
            raise WireFormatError(f"unknown zone code {body[8]}")
        return StatusResponse(int.from_bytes(body[:8], "big"), zone)
    if opcode == OP_REFUSAL:
        if len(body) != 8:
            raise WireFormatError("refusal body must be 8 bytes")
        return RefusalResponse(int.from_bytes(body, "big"))
    raise WireFormatError(f"unknown opcode {opcode:#x}")


class KeyStore:
    """Receiver-side key material with single-use enforcement."""

    def __init__(self):
        self._blocks: dict[int, bytes] = {}
        self._consumed: set[int] = set()
        self._lock = threading.Lock()

    def add(self, index: int, block: bytes) -> None:
        with self._lock:
            self._blocks[index] = block

    def __call__(self, index: int) -> bytes | None:
        with self._lock:
            if index in self._consumed:
                return None
            return self._blocks.get(index)

    def mark_consumed(self, index: int) -> None:
        with self._lock:
            self._consumed.add(index)


class KeyServer:
    """Serializes all pool debits; one instance per pool."""

    def __init__(self, pool: KeyPool, material_seed: bytes = b"qkdscada"):
        self.pool = pool
        self.seed = material_seed
        self._lock = threading.Lock()
        self._next_index = 0

    def get_key(self, count: int):
        """Debit ``count`` blocks and mint their material, or refuse."""
        if count < 1:
            raise WireFormatError("get-key count must be at least 1")
        with self._lock:
            if not self.pool.debit(BLOCK_BITS * count):
                return RefusalResponse(self.pool.level)
            keys = []
            for _ in range(count):
                keys.append((self._next_index, synth_block(self.seed, self._next_index)))
                self._next_index += 1
            return KeysResponse(tuple(keys))

    def pool_status(self) -> StatusResponse:
        with self._lock:
            return StatusResponse(self.pool.level, self.pool.zone())

    def handle(self, request):
        if isinstance(request, GetKeyRequest):
            return self.get_key(request.count)
        if isinstance(request, StatusRequest):
            return self.pool_status()
        raise WireFormatError(f"not a request: {type(request).__name__}")

    def handle_datagram(self, payload: bytes) -> bytes:
        return encode_message(self.handle(decode_message(payload)))


def key_server_roundtrip(server: KeyServer, request) -> object:
    """One request/response cycle through the wire codec, as a client sees it."""
    return decode_message(server.handle_datagram(encode_message(request)))


class _UdpHandler(socketserver.BaseRequestHandler):
    def handle(self):
        data, sock = self.request
        reply = self.server.key_server.handle_datagram(data)
        sock.sendto(reply, self.client_address)


def serve_udp(server: KeyServer, host: str = "127.0.0.1", port: int = 0):
    """Live datagram endpoint for demos; returns the running socketserver.

    The simulation itself never depends on this transport — results are
    identical through the in-process channel.
    """
    udp = socketserver.UDPServer((host, port), _UdpHandler)
    udp.key_server = server
    thread = threading.Thread(target=udp.serve_forever, daemon=True)
    thread.start()
    return udp


def udp_roundtrip(address: tuple[str, int], request, timeout: float = 2.0):
    """Client helper: send one request datagram and decode the reply."""
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
        sock.settimeout(timeout)
        sock.sendto(encode_message(request), address)
        data, _ = sock.recvfrom(65536)
    return decode_message(data)
