"""P node workers and a fusion worker exchanging framed messages.

Every worker is a thread that only talks through its links.  A node holds a
private copy of its ``A^p`` and ``y^p`` rows; the fusion worker never sees
the matrix.  Rounds are synchronous: broadcast, gather all P estimates (in
node order), fuse, reply.
"""
from __future__ import annotations

import logging
import math
import queue
import socket
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError, MpampError
from ..rd import GAUSSIAN
from ..sim import (
    NodeMessage,
    QuantMode,
    RunRecord,
    billed_bytes,
    fuse,
    make_node_message,
    node_step,
    noise_key,
)
from . import wire

log = logging.getLogger(__name__)

__all__ = [
    "ClusterError",
    "ProtocolError",
    "RoundTimeout",
    "ByteLedger",
    "RoundResult",
    "ClusterHandle",
    "spawn_cluster",
    "run_harness",
]


class ClusterError(MpampError):
    pass


class ProtocolError(ClusterError):
    pass


class RoundTimeout(ClusterError):
    def __init__(self, message, node_id):
        super().__init__(message)
        self.node_id = node_id


# --------------------------------------------------------------------------
# transports: a link carries whole frames in one direction


class ChannelLink:
    def __init__(self):
        self._q = queue.Queue()

    def send(self, frame: bytes):
        self._q.put(frame)

    def recv(self, timeout=None):
        try:
            return self._q.get(timeout=timeout)
        except queue.Empty:
            return None

    def close(self):
        self._q.put(b"")


class SocketLink:
    """Connected local socket pair; frames are self-delimiting via the header."""

    def __init__(self):
        self._tx, self._rx = socket.socketpair()
        self._lock = threading.Lock()

    def send(self, frame: bytes):
        with self._lock:
            self._tx.sendall(frame)

    def _read(self, n, deadline):
        chunks, got = [], 0
        while got < n:
            left = None if deadline is None else deadline - time.monotonic()
            if left is not None and left <= 0:
                return None
            try:
                self._rx.settimeout(left)
                chunk = self._rx.recv(n - got)
            except socket.timeout:
                return None
            except OSError:
                return b""
            if not chunk:
                return b""
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def recv(self, timeout=None):
        deadline = None if timeout is None else time.monotonic() + timeout
        head = self._read(wire.HEADER_SIZE, deadline)
        if not head:
            return head
        plen = wire.decode_header(head)[-1]
        body = self._read(plen, deadline) if plen else b""
        if body is None:
            return None
        return head + body

    def close(self):
        for s in (self._tx, self._rx):
            try:
                s.close()
            except OSError:
                pass


def _make_link(transport):
    if transport == "channel":
        return ChannelLink()
    if transport == "socket":
        return SocketLink()
    raise DomainError(f"unknown transport {transport!r}")


# --------------------------------------------------------------------------
# accounting


@dataclass
class ByteLedger:
    billed_uplink: list = field(default_factory=list)
    transported: list = field(default_factory=list)
    downlink: list = field(default_factory=list)
    uplink_frames: int = 0
    broadcasts: int = 0

    def record(self, billed, transported, downlink):
        self.billed_uplink.append(billed)
        self.transported.append(transported)
        self.downlink.append(downlink)

    @property
    def billed_total(self):
        return sum(self.billed_uplink)

    @property
    def billed_total_bits(self):
        return 8 * self.billed_total

    def rows(self):
        for t, row in enumerate(zip(self.billed_uplink, self.transported, self.downlink), start=1):
            yield (t, *row)


@dataclass
class RoundResult:
    t: int
    x_next: np.ndarray
    g: float
    sigma_hat_sq: float
    billed_uplink: int
    transported: int
    downlink: int
    distortion_target: float = 0.0
    distortion_empirical: float = 0.0
    entropy_bits: float = math.nan
    noop: bool = False


# --------------------------------------------------------------------------
# workers


class _NodeWorker(threading.Thread):
    def __init__(self, node_id, A_p, y_p, row_range, downlink, uplink, kappa, P, mode, rd_model, params, quant_seed):
        super().__init__(name=f"mpamp-node-{node_id}", daemon=True)
        self.node_id = node_id
        self.A_p = np.array(A_p, copy=True)
        self.y_p = np.array(y_p, copy=True)
        self.row_range = row_range
        self.downlink, self.uplink = downlink, uplink
        self.kappa, self.P = kappa, P
        self.mode, self.rd_model, self.params = mode, rd_model, params
        self.quant_seed = quant_seed
        self.r_prev = None
        self.last_t = 0
        self.error = None

    def run(self):
        try:
            while True:
                frame = self.downlink.recv()
                if not frame:
                    return
                msg = wire.decode_message(frame)
                if msg.msg_type != wire.BROADCAST:
                    raise ProtocolError(f"node {self.node_id} got msg_type {msg.msg_type}")
                if msg.iteration != self.last_t + 1:
                    raise ProtocolError(f"node {self.node_id} expected iteration {self.last_t + 1}, got {msg.iteration}")
                self.last_t = msg.iteration
                self.uplink.send(self._answer(msg))
        except Exception as exc:  # reported by the fusion side as a timeout
            self.error = exc
            log.error("node %d stopped: %s", self.node_id, exc)

    def _answer(self, msg):
        rate = wire.milli_to_rate(msg.rate_milli_bits)
        payload = b""
        if rate != 0:
            x_t, g_prev = wire.unpack_broadcast(msg.payload)
            r, f = node_step(self.A_p, self.y_p, x_t, self.r_prev, g_prev, self.kappa, self.P)
            self.r_prev = r
            nm = make_node_message(f, r, rate, self.mode, self.rd_model, self.params, self.A_p.shape[0],
                                   noise_key(self.quant_seed, msg.iteration, self.node_id))
            payload = wire.pack_estimate(self.mode, nm.values, nm.residual_sq, nm.distortion,
                                         nm.empirical_distortion, nm.entropy_bits, nm.step, nm.indices)
        return wire.encode_message(wire.WireMessage(wire.NODE_ESTIMATE, msg.iteration, self.node_id,
                                                    msg.rate_milli_bits, payload))


class _FusionWorker(threading.Thread):
    def __init__(self, downlinks, uplinks, prior, M, N, timeout):
        super().__init__(name="mpamp-fusion", daemon=True)
        self.downlinks, self.uplinks = downlinks, uplinks
        self.prior, self.M, self.N = prior, M, N
        self.timeout = timeout
        self.commands = queue.Queue()
        self.replies = queue.Queue()
        self.x_t = np.zeros(N)
        self.g_prev = None

    def run(self):
        while True:
            cmd = self.commands.get()
            if cmd is None:
                return
            try:
                self.replies.put(self._round(*cmd))
            except Exception as exc:
                self.replies.put(exc)

    def _round(self, t, rate):
        milli = wire.rate_to_milli(rate)
        payload = wire.pack_broadcast(self.x_t, self.g_prev)
        frame = wire.encode_message(wire.WireMessage(wire.BROADCAST, t, 0, milli, payload))
        for link in self.downlinks:
            link.send(frame)
        deadline = time.monotonic() + self.timeout
        msgs, transported = [], 0
        for p, link in enumerate(self.uplinks):
            raw = link.recv(timeout=max(deadline - time.monotonic(), 0.0))
            if not raw:
                raise RoundTimeout(f"round {t}: no message from node {p} within {self.timeout}s", p)
            m = wire.decode_message(raw)
            if m.msg_type != wire.NODE_ESTIMATE or m.node_id != p:
                raise ProtocolError(f"round {t}: unexpected frame type={m.msg_type} node={m.node_id} on link {p}")
            if m.iteration != t:
                raise ProtocolError(f"round {t}: node {p} answered for iteration {m.iteration}")
            transported += m.payload_len
            msgs.append(m)
        P = len(self.uplinks)
        down = len(payload) * P
        if rate == 0:
            if any(m.payload_len for m in msgs):
                raise ProtocolError(f"round {t}: zero-rate round carried a payload")
            return RoundResult(t, self.x_t, self.g_prev, math.nan, 0, 0, down, noop=True)
        decoded = [wire.unpack_estimate(m.payload) for m in msgs]
        node_msgs = [NodeMessage(d["values"], d["residual_sq"], d["distortion"], d["empirical_distortion"],
                                 d["entropy_bits"]) for d in decoded]
        x_next, g, s_hat, _ = fuse(node_msgs, self.prior, self.M)
        self.x_t, self.g_prev = x_next, g
        billed = billed_bytes(self.N, rate, P) if math.isfinite(rate) else transported
        return RoundResult(
            t, x_next, g, s_hat, billed, transported, down,
            distortion_target=float(np.mean([m.distortion for m in node_msgs])),
            distortion_empirical=float(np.mean([m.empirical_distortion for m in node_msgs])),
            entropy_bits=float(np.mean([m.entropy_bits for m in node_msgs])),
        )


class ClusterHandle:
    """Drives rounds on a running cluster; use as a context manager."""

    def __init__(self, nodes, fusion, links, P, timeout):
        self.nodes, self.fusion, self._links = nodes, fusion, links
        self.P, self.timeout = P, timeout
        self.ledger = ByteLedger()
        self.last_t = 0
        self.closed = False

    def run_round(self, t, rate) -> RoundResult:
        if self.closed:
            raise ClusterError("cluster is shut down")
        if t != self.last_t + 1:
            raise ProtocolError(f"rounds must be sequential: expected {self.last_t + 1}, got {t}")
        self.fusion.commands.put((t, float(rate)))
        try:
            res = self.fusion.replies.get(timeout=self.timeout + 5)
        except queue.Empty:
            raise ClusterError(f"fusion worker did not answer round {t}") from None
        if isinstance(res, Exception):
            raise res
        self.last_t = t
        self.ledger.record(res.billed_uplink, res.transported, res.downlink)
        self.ledger.uplink_frames += self.P
        self.ledger.broadcasts += 1
        return res

    def shutdown(self):
        if self.closed:
            return
        self.closed = True
        self.fusion.commands.put(None)
        for link in self._links:
            link.close()
        for w in [*self.nodes, self.fusion]:
            if w.is_alive():
                w.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


def spawn_cluster(instance, P=None, quant_mode="gaussian", rd_model=GAUSSIAN, transport="channel", quant_seed=None,
                  timeout=30.0) -> ClusterHandle:
    """Start P node workers (each with only its row block) and a fusion worker."""
    P = instance.params.P if P is None else P
    if P != len(instance.partition):
        raise DomainError(f"instance is partitioned for {len(instance.partition)} nodes, not {P}")
    mode = QuantMode.parse(quant_mode)
    qseed = instance.seed if quant_seed is None else quant_seed
    down = [_make_link(transport) for _ in range(P)]
    up = [_make_link(transport) for _ in range(P)]
    started = []
    try:
        nodes = []
        for p in range(P):
            lo, hi = instance.partition[p]
            A_p, y_p = instance.node_slice(p)
            node = _NodeWorker(p, A_p, y_p, (lo, hi), down[p], up[p], instance.kappa, P, mode, rd_model,
                               instance.params, qseed)
            node.start()
            started.append(node)
            nodes.append(node)
        fusion = _FusionWorker(down, up, instance.params.prior, instance.M, instance.N, timeout)
        fusion.start()
        started.append(fusion)
    except Exception as exc:
        for link in down + up:
            link.close()
        for w in started:
            w.join(timeout=5)
        raise ClusterError(f"cluster startup failed: {exc}") from exc
    return ClusterHandle(nodes, fusion, down + up, P, timeout)


def run_harness(instance, schedule, quant_mode="gaussian", rd_model=GAUSSIAN, transport="channel", quant_seed=None,
                timeout=30.0):
    """Replay a schedule on a fresh cluster; returns ``(RunRecord, ByteLedger)``."""
    rates = list(getattr(schedule, "rates", schedule))
    rec = RunRecord(seed=instance.seed)
    current = float(np.mean(instance.x**2))
    with spawn_cluster(instance, quant_mode=quant_mode, rd_model=rd_model, transport=transport,
                       quant_seed=quant_seed, timeout=timeout) as cluster:
        for t, rate in enumerate(rates, start=1):
            res = cluster.run_round(t, rate)
            if not res.noop:
                current = float(np.mean((res.x_next - instance.x) ** 2))
                rec.sigma_hat_sq.append(res.sigma_hat_sq)
            else:
                rec.sigma_hat_sq.append(rec.sigma_hat_sq[-1] if rec.sigma_hat_sq else math.nan)
            rec.mse.append(current)
            rec.bytes_billed.append(res.billed_uplink)
            rec.distortion_target.append(res.distortion_target)
            rec.distortion_empirical.append(res.distortion_empirical)
            rec.entropy_bits.append(res.entropy_bits)
        rec.x_hat = cluster.fusion.x_t
        ledger = cluster.ledger
    return rec, ledger
