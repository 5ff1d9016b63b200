"""Bit-exact secure framing of IEC-104 application payloads.

Frame layout (big-endian throughout), frozen as this repo's
interoperability contract:

    version   1 byte   0x01
    mode      1 byte   0x01 = session-cipher mode, 0x02 = one-time-pad mode
    key_index 8 bytes  unsigned
    length    2 bytes  ciphertext length
    payload   N bytes  encrypted ASDU
    mac       16 bytes truncated HMAC-SHA-256 over header || payload

One-time-pad mode XORs the payload with the key block; session mode runs
AES-128 in counter mode keyed by the first 16 block bytes with the key
index as nonce, so independent implementations can reproduce frames
byte for byte. The MAC subkey is the last 16 bytes of SHA-256(key
block), spending no extra pool bits.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

VERSION = 0x01
MODE_AES = 0x01
MODE_OTP = 0x02

HEADER_LEN = 12
MAC_LEN = 16
MIN_FRAME_LEN = HEADER_LEN + MAC_LEN

ASDU_MIN_LEN = 4
ASDU_MAX_LEN = 249  # IEC-104 APDU payload bound


class FrameError(Exception):
    """Base for all framing failures; subclasses are distinguishable."""


class TruncatedFrameError(FrameError):
    pass


class MacMismatchError(FrameError):
    pass


class UnknownKeyIndexError(FrameError):
    pass


class UnknownModeError(FrameError):
    pass


class InsufficientKeyError(FrameError):
    pass


class AsduError(FrameError):
    pass


@dataclass(frozen=True)
class AsduMessage:
    """IEC-104 application service data unit (the secured payload)."""

    type_id: int
    cause_of_transmission: int
    common_address: int
    info_object: bytes

    def encode(self) -> bytes:
        if not 0 <= self.type_id <= 0xFF or not 0 <= self.cause_of_transmission <= 0xFF:
            raise AsduError("type id and cause of transmission are single bytes")
        if not 0 <= self.common_address <= 0xFFFF:
            raise AsduError("common address must fit two bytes")
        raw = bytes([self.type_id, self.cause_of_transmission]) \
            + self.common_address.to_bytes(2, "big") + self.info_object
        if not ASDU_MIN_LEN <= len(raw) <= ASDU_MAX_LEN:
            raise AsduError(f"ASDU length {len(raw)} outside [{ASDU_MIN_LEN}, {ASDU_MAX_LEN}]")
        return raw

    @classmethod
    def decode(cls, raw: bytes) -> "AsduMessage":
        if len(raw) < ASDU_MIN_LEN:
            raise AsduError(f"ASDU too short: {len(raw)} bytes")
        if len(raw) > ASDU_MAX_LEN:
            raise AsduError(f"ASDU too long: {len(raw)} bytes")
        return cls(raw[0], raw[1], int.from_bytes(raw[2:4], "big"), raw[4:])


def message_key_cost(mode: int, payload_length: int) -> int:
    """Key bits one message of ``payload_length`` bytes consumes.

    One-time-pad mode spends one key bit per payload bit; session mode a
    fixed 128-bit key per message.
    """
    if payload_length <= 0:
        raise FrameError("payload length must be positive")
    if mode == MODE_OTP:
        return 8 * payload_length
    if mode == MODE_AES:
        return 128
    raise UnknownModeError(f"unknown mode byte {mode:#x}")


def _mac_subkey(key_block: bytes) -> bytes:
    return hashlib.sha256(key_block).digest()[-MAC_LEN:]


def _aes_ctr(key_block: bytes, key_index: int, data: bytes) -> bytes:
    # Nonce = key index in the counter block's top half; unique per frame
    # because indices are single-use.
    nonce = key_index.to_bytes(8, "big") + bytes(8)
    cipher = Cipher(algorithms.AES(key_block[:16]), modes.CTR(nonce))
    enc = cipher.encryptor()
    return enc.update(data) + enc.finalize()


def encode_frame(asdu: AsduMessage, mode: int, key_block: bytes, key_index: int) -> bytes:
    """Serialize, encrypt, and authenticate one ASDU."""
    plaintext = asdu.encode()
    if mode == MODE_OTP:
        if len(key_block) < len(plaintext):
            raise InsufficientKeyError(
                f"one-time pad needs {len(plaintext)} key bytes, block has {len(key_block)}")
        ciphertext = bytes(p ^ k for p, k in zip(plaintext, key_block))
    elif mode == MODE_AES:
        if len(key_block) < 16:
            raise InsufficientKeyError("session mode needs a 128-bit key block")
        ciphertext = _aes_ctr(key_block, key_index, plaintext)
    else:
        raise UnknownModeError(f"unknown mode byte {mode:#x}")
    if not 0 <= key_index < 2 ** 64:
        raise FrameError("key index must fit eight bytes")
    header = bytes([VERSION, mode]) + key_index.to_bytes(8, "big") \
        + len(ciphertext).to_bytes(2, "big")
    mac = hmac.new(_mac_subkey(key_block), header + ciphertext, hashlib.sha256).digest()[:MAC_LEN]
    return header + ciphertext + mac


def decode_frame(data: bytes, key_lookup) -> AsduMessage:
    """Parse, authenticate (constant-time), decrypt, and deserialize.

    ``key_lookup`` maps a key index to its block, returning None for
    unknown or already-consumed indices. After a successful one-time-pad
    decode the index is marked consumed when the lookup object supports
    it, enforcing single use.
    """
    if len(data) < MIN_FRAME_LEN:
        raise TruncatedFrameError(f"frame of {len(data)} bytes below minimum {MIN_FRAME_LEN}")
    version, mode = data[0], data[1]
    if version != VERSION:
        raise FrameError(f"unsupported frame version {version:#x}")
    if mode not in (MODE_AES, MODE_OTP):
        raise UnknownModeError(f"unknown mode byte {mode:#x}")
    key_index = int.from_bytes(data[2:10], "big")
    length = int.from_bytes(data[10:12], "big")
    if len(data) != HEADER_LEN + length + MAC_LEN:
        raise TruncatedFrameError(
            f"frame length {len(data)} inconsistent with declared payload {length}")
    key_block = key_lookup(key_index)
    if key_block is None:
        raise UnknownKeyIndexError(f"no key material for index {key_index}")
    header = data[:HEADER_LEN]
    ciphertext = data[HEADER_LEN:HEADER_LEN + length]
    tag = data[HEADER_LEN + length:]
    expected = hmac.new(_mac_subkey(key_block), header + ciphertext,
                        hashlib.sha256).digest()[:MAC_LEN]
    if not hmac.compare_digest(tag, expected):
        raise MacMismatchError("authentication tag mismatch")
    if mode == MODE_OTP:
        if len(key_block) < length:
            raise InsufficientKeyError("key block shorter than payload")
        plaintext = bytes(c ^ k for c, k in zip(ciphertext, key_block))
    else:
        plaintext = _aes_ctr(key_block, key_index, ciphertext)
    asdu = AsduMessage.decode(plaintext)
    if mode == MODE_OTP and hasattr(key_lookup, "mark_consumed"):
        key_lookup.mark_consumed(key_index)
    return asdu
