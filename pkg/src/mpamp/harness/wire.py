"""Binary framing for node <-> fusion-center messages.

Frame layout, little-endian::

    magic        4s   b"MPAM"
    version      u8   1
    msg_type     u8   0 = node -> fusion estimate, 1 = fusion -> node broadcast
    iteration    u16
    node_id      u16
    rate_milli   u32  round(R * 1000); 0xFFFFFFFF marks an infinite (lossless) rate
    payload_len  u32
    payload      payload_len bytes
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import DomainError, MpampError

MAGIC = b"MPAM"
VERSION = 1
NODE_ESTIMATE = 0
BROADCAST = 1
HEADER = struct.Struct("<4sBBHHII")
HEADER_SIZE = HEADER.size
INF_RATE = 0xFFFFFFFF

__all__ = [
    "WireMessage",
    "DecodeError",
    "TruncatedFrame",
    "BadMagic",
    "BadVersion",
    "LengthMismatch",
    "encode_message",
    "decode_message",
    "decode_header",
    "rate_to_milli",
    "milli_to_rate",
    "pack_estimate",
    "unpack_estimate",
    "pack_broadcast",
    "unpack_broadcast",
]


class DecodeError(MpampError):
    pass


class TruncatedFrame(DecodeError):
    pass


class BadMagic(DecodeError):
    pass


class BadVersion(DecodeError):
    pass


class LengthMismatch(DecodeError):
    pass


@dataclass(frozen=True)
class WireMessage:
    msg_type: int
    iteration: int
    node_id: int
    rate_milli_bits: int
    payload: bytes = b""
    version: int = VERSION

    @property
    def payload_len(self):
        return len(self.payload)


def rate_to_milli(rate):
    if math.isinf(rate):
        return INF_RATE
    if rate < 0:
        raise DomainError("rate must be >= 0")
    milli = int(round(rate * 1000))
    if milli >= INF_RATE:
        raise DomainError(f"rate {rate} does not fit the u32 milli-bit field")
    return milli


def milli_to_rate(milli):
    return math.inf if milli == INF_RATE else milli / 1000.0


def encode_message(msg: WireMessage) -> bytes:
    if msg.msg_type not in (NODE_ESTIMATE, BROADCAST):
        raise DomainError(f"unknown msg_type {msg.msg_type}")
    if msg.version != VERSION:
        raise DomainError(f"only version {VERSION} is supported")
    for name, value, bits in (("iteration", msg.iteration, 16), ("node_id", msg.node_id, 16),
                              ("rate_milli_bits", msg.rate_milli_bits, 32), ("payload_len", msg.payload_len, 32)):
        if not 0 <= value < 2**bits:
            raise DomainError(f"{name}={value} out of range for u{bits}")
    head = HEADER.pack(MAGIC, msg.version, msg.msg_type, msg.iteration, msg.node_id,
                       msg.rate_milli_bits, len(msg.payload))
    return head + bytes(msg.payload)


def decode_header(buf):
    """Validate and unpack the fixed header; returns the field tuple."""
    if len(buf) < HEADER_SIZE:
        raise TruncatedFrame(f"truncated frame: {len(buf)} bytes, header needs {HEADER_SIZE}")
    magic, version, msg_type, iteration, node_id, rate, plen = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise BadVersion(f"bad version {version}")
    if msg_type not in (NODE_ESTIMATE, BROADCAST):
        raise DecodeError(f"bad msg_type {msg_type}")
    return version, msg_type, iteration, node_id, rate, plen


def decode_message(buf) -> WireMessage:
    buf = bytes(buf)
    version, msg_type, iteration, node_id, rate, plen = decode_header(buf)
    if len(buf) - HEADER_SIZE != plen:
        raise LengthMismatch(f"length mismatch: header says {plen} payload bytes, frame has {len(buf) - HEADER_SIZE}")
    return WireMessage(msg_type, iteration, node_id, rate, buf[HEADER_SIZE:], version)


# --------------------------------------------------------------------------
# payloads

_EST = struct.Struct("<Bdddd")
_BODY_DTYPE = {0: "<f8", 1: "<f4", 2: "<i4"}


def pack_estimate(mode, values, residual_sq, distortion, empirical_distortion, entropy_bits, step=0.0,
                  indices=None) -> bytes:
    """Node estimate payload: scalars, then the quantized vector.

    Lossless sends float64 values, Gaussian emulation float32, the uniform
    quantizer int32 cell indices (the step travels in the header scalars).
    """
    mode = int(mode)
    head = _EST.pack(mode, residual_sq, distortion, empirical_distortion, entropy_bits)
    if mode == 2:
        body = np.asarray(indices, dtype="<i4").tobytes() + struct.pack("<d", step)
    else:
        body = np.asarray(values, dtype=_BODY_DTYPE[mode]).tobytes()
    return head + body


def unpack_estimate(payload):
    """Inverse of :func:`pack_estimate`; returns a dict with float64 ``values``."""
    mode, residual_sq, distortion, emp, ent = _EST.unpack_from(payload)
    body = payload[_EST.size:]
    if mode == 2:
        step = struct.unpack("<d", body[-8:])[0]
        idx = np.frombuffer(body[:-8], dtype="<i4")
        values = step * (idx + 0.5)
    elif mode in _BODY_DTYPE:
        values = np.frombuffer(body, dtype=_BODY_DTYPE[mode]).astype(np.float64)
        step = 0.0
    else:
        raise DecodeError(f"unknown payload mode {mode}")
    return dict(mode=mode, values=values, residual_sq=residual_sq, distortion=distortion,
                empirical_distortion=emp, entropy_bits=ent, step=step)


_BC = struct.Struct("<Bd")


def pack_broadcast(x_t, g_prev) -> bytes:
    """Fusion broadcast: ``g_{t-1}`` (flag 0 when absent) and ``x_t`` as float64."""
    has = g_prev is not None
    return _BC.pack(int(has), g_prev if has else 0.0) + np.asarray(x_t, dtype="<f8").tobytes()


def unpack_broadcast(payload):
    has, g = _BC.unpack_from(payload)
    x = np.frombuffer(payload[_BC.size:], dtype="<f8").astype(np.float64)
    return x, (g if has else None)
