"""Secure framing, key-delivery protocol, and latency injection."""

from .frames import (ASDU_MAX_LEN, ASDU_MIN_LEN, AsduMessage, FrameError,
                     InsufficientKeyError, MacMismatchError, MODE_AES,
                     MODE_OTP, TruncatedFrameError, UnknownKeyIndexError,
                     UnknownModeError, decode_frame, encode_frame,
                     message_key_cost)
from .keyserver import (BLOCK_BITS, BLOCK_BYTES, GetKeyRequest, KeyServer,
                        KeysResponse, KeyStore, RefusalResponse,
                        StatusRequest, StatusResponse, WireFormatError,
                        decode_message, encode_message, key_server_roundtrip,
                        serve_udp, synth_block, udp_roundtrip)
from .latency import DROPPED, LatencyModel, inject_latency

__all__ = [
    "ASDU_MAX_LEN", "ASDU_MIN_LEN", "AsduMessage", "FrameError",
    "InsufficientKeyError", "MacMismatchError", "MODE_AES", "MODE_OTP",
    "TruncatedFrameError", "UnknownKeyIndexError", "UnknownModeError",
    "decode_frame", "encode_frame", "message_key_cost",
    "BLOCK_BITS", "BLOCK_BYTES", "GetKeyRequest", "KeyServer", "KeysResponse",
    "KeyStore", "RefusalResponse", "StatusRequest", "StatusResponse",
    "WireFormatError", "decode_message", "encode_message",
    "key_server_roundtrip", "serve_udp", "synth_block", "udp_roundtrip",
    "DROPPED", "LatencyModel", "inject_latency",
]
