"""Multi-worker MP-AMP with a binary wire protocol and byte accounting."""
from .cluster import (
    ByteLedger,
    ClusterError,
    ClusterHandle,
    ProtocolError,
    RoundResult,
    RoundTimeout,
    run_harness,
    spawn_cluster,
)
from .wire import (
    BadMagic,
    BadVersion,
    DecodeError,
    LengthMismatch,
    TruncatedFrame,
    WireMessage,
    decode_message,
    encode_message,
)

__all__ = [
    "ByteLedger",
    "ClusterError",
    "ClusterHandle",
    "ProtocolError",
    "RoundResult",
    "RoundTimeout",
    "run_harness",
    "spawn_cluster",
    "WireMessage",
    "encode_message",
    "decode_message",
    "DecodeError",
    "TruncatedFrame",
    "BadMagic",
    "BadVersion",
    "LengthMismatch",
]
