"""Bit-package key-exchange session, watchdog and continuous rekeying.

A :class:`Session` is one party's state machine.  Each round it evaluates
``b`` inputs with frozen weights (:meth:`Session.produce_package`), swaps the
resulting output bits with the peer and then replays learning over the
stored evaluations (:meth:`Session.absorb_package`).  ``t_min`` consecutive
agreeing output bits mark the pair as synchronized and the current weights
become a key.
"""

from __future__ import annotations

import enum
import math
import struct
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tpm
from .errors import ProtocolError, SyncError, TransportError
from .lfsr import SharedInputGenerator
from .tpm import KeyMaterial, Role, TpmParams
from .transport import BP_PAYLOAD, Endpoint, FrameType, Listener, channel_pair, connect

_U32 = struct.Struct(">I")


class Phase(enum.Enum):
    IDLE = "idle"
    GENERATING = "generating"
    AWAITING_PEER = "awaiting_peer"
    LEARNING = "learning"
    SYNCHRONIZED = "synchronized"
    FAILED = "failed"


class Status(enum.Enum):
    RUNNING = "running"
    SYNCHRONIZED = "synchronized"
    FAILED = "failed"


class Restart(str, enum.Enum):
    CONTINUE = "continue"  # keep walking from the common weights
    RESET = "reset"  # fresh random weights, full resynchronization


@dataclass(frozen=True)
class BitPackage:
    bits: tuple[int, ...]
    seq: int

    def to_bytes(self) -> bytes:
        """First output bit is the most significant bit of byte 0."""
        return np.packbits(np.asarray(self.bits, dtype=np.uint8)).tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, seq: int, b: int) -> BitPackage:
        if len(data) != math.ceil(b / 8):
            raise ProtocolError(f"package of {len(data)} bytes cannot hold {b} bits")
        bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))[:b]
        return cls(tuple(int(v) for v in bits), seq)


class KeyQueue:
    """FIFO of keys with one producer and one consumer."""

    def __init__(self):
        self._items: deque[KeyMaterial] = deque()
        self._cond = threading.Condition()
        self.history: list[KeyMaterial] = []

    def put(self, key: KeyMaterial) -> None:
        with self._cond:
            self._items.append(key)
            self.history.append(key)
            self._cond.notify()

    def pop(self, block: bool = False, timeout: float | None = None) -> KeyMaterial | None:
        with self._cond:
            if block:
                self._cond.wait_for(lambda: self._items, timeout)
            return self._items.popleft() if self._items else None

    def __len__(self) -> int:
        return len(self._items)

    def snapshot(self) -> list[KeyMaterial]:
        with self._cond:
            return list(self._items)


class Session:
    def __init__(self, params: TpmParams, weights: np.ndarray, seed: int, *,
                 continuous: bool = False, restart: Restart | str = Restart.CONTINUE,
                 rng: np.random.Generator | None = None):
        weights = np.array(weights, dtype=tpm.WEIGHT_DTYPE)
        if weights.shape != params.shape:
            raise ValueError(f"weights shape {weights.shape} does not match {params.shape}")
        if np.abs(weights).max(initial=0) > params.L:
            raise ValueError("initial weights out of [-L, L]")
        self.params = params
        self.weights = weights
        self.gen = SharedInputGenerator(seed)
        self.continuous = continuous
        self.restart_policy = Restart(restart)
        if self.restart_policy is Restart.RESET and rng is None:
            raise ValueError("reset restarts need an rng for fresh weights")
        self.rng = rng
        self.phase = Phase.IDLE
        self.agree_count = 0
        self.iter_count = 0
        self.total_iterations = 0
        self.pending: list[tuple[np.ndarray, tpm.Evaluation]] = []
        self.key_queue = KeyQueue()
        self.tx_packages = 0
        self.rx_packages = 0
        self.synchronized = False
        self.detected_at: int | None = None
        self.outputs: list[int] = []

    def start(self) -> Session:
        if self.phase is not Phase.IDLE:
            raise ProtocolError(f"start() in phase {self.phase.name}")
        self.phase = Phase.GENERATING
        return self

    def produce_package(self) -> BitPackage:
        if self.phase is Phase.IDLE:
            self.start()
        if self.phase not in (Phase.GENERATING, Phase.SYNCHRONIZED):
            raise ProtocolError(f"produce_package in phase {self.phase.name}")
        p = self.params
        bits = []
        for x in self.gen.next_inputs(p.b, p.K, p.N):
            ev = tpm.evaluate(self.weights, x, p.tie_role)
            self.pending.append((x, ev))
            bits.append(1 if ev.output > 0 else 0)
        package = BitPackage(tuple(bits), self.tx_packages)
        self.tx_packages += 1
        self.phase = Phase.AWAITING_PEER
        return package

    def absorb_package(self, peer: BitPackage) -> Status:
        if self.phase is not Phase.AWAITING_PEER:
            raise ProtocolError(f"absorb_package in phase {self.phase.name}")
        if peer.seq != self.rx_packages:
            raise ProtocolError(f"package seq {peer.seq}, expected {self.rx_packages}")
        p = self.params
        if len(peer.bits) != len(self.pending):
            raise ProtocolError(f"peer package has {len(peer.bits)} bits, expected {len(self.pending)}")
        self.phase = Phase.LEARNING
        newly_synced = False
        for (x, ev), bit in zip(self.pending, peer.bits):
            peer_output = 1 if bit else -1
            self.agree_count = min(self.agree_count + 1, p.t_min) if ev.output == peer_output else 0
            self.weights = tpm.hebbian_update(self.weights, x, ev, peer_output, p.L)
            self.iter_count += 1
            self.total_iterations += 1
            self.outputs.append(ev.output)
            if not self.synchronized and self.agree_count >= p.t_min:
                self.synchronized = newly_synced = True
                self.detected_at = self.total_iterations
        self.pending.clear()
        self.rx_packages += 1

        if newly_synced:
            self.phase = Phase.SYNCHRONIZED
            self.key_queue.put(tpm.extract_key(self.weights, p.L))
            if self.continuous:
                self.restart()
            return Status.SYNCHRONIZED
        if self.synchronized:
            self.phase = Phase.SYNCHRONIZED
            return Status.SYNCHRONIZED
        if self.iter_count > p.watchdog_max:
            self.phase = Phase.FAILED
            return Status.FAILED
        self.phase = Phase.GENERATING
        return Status.RUNNING

    def restart(self) -> None:
        """Begin synchronizing toward the next key."""
        if self.phase is Phase.FAILED:
            raise ProtocolError("restart after sync_error")
        self.agree_count = 0
        self.iter_count = 0
        self.synchronized = False
        if self.restart_policy is Restart.RESET:
            self.weights = tpm.init_weights(self.rng, self.params)
        self.phase = Phase.GENERATING

    @property
    def failed(self) -> bool:
        return self.phase is Phase.FAILED

    @property
    def key(self) -> KeyMaterial:
        return tpm.extract_key(self.weights, self.params.L)


# -- handshake and rounds over an endpoint ----------------------------------

_FLAG_SEED = 0x01
_FLAG_AUTH = 0x02


def encode_hello(role: Role, seed: int | None, authenticated: bool) -> bytes:
    flags = (_FLAG_SEED if seed is not None else 0) | (_FLAG_AUTH if authenticated else 0)
    payload = bytes([ord(Role(role).value), flags])
    if seed is not None:
        payload += _U32.pack(seed)
    return payload


def decode_hello(payload: bytes) -> tuple[Role, int | None, bool]:
    if len(payload) not in (2, 6):
        raise ProtocolError(f"HELLO payload of {len(payload)} bytes")
    try:
        role = Role(chr(payload[0]))
    except ValueError:
        raise ProtocolError(f"unknown role byte {payload[0]:#04x}") from None
    flags = payload[1]
    has_seed = bool(flags & _FLAG_SEED)
    if has_seed != (len(payload) == 6):
        raise ProtocolError("HELLO seed flag does not match payload length")
    seed = _U32.unpack_from(payload, 2)[0] if has_seed else None
    return role, seed, bool(flags & _FLAG_AUTH)


def handshake(endpoint: Endpoint, role: Role, seed: int | None, authenticated: bool) -> int:
    """Exchange HELLO frames and return the input seed both sides will use.

    Role A speaks first.  In public-input mode A's HELLO carries the seed; in
    authenticated mode no seed is transmitted and both sides use their
    pre-shared one.
    """
    role = Role(role)
    if authenticated and seed is None:
        raise ValueError("authenticated mode needs a pre-shared seed")
    if role is Role.A and seed is None:
        raise ValueError("the initiating party must supply the input seed")
    wire_seed = None if authenticated or role is Role.B else seed
    if role is Role.A:
        endpoint.send_message(FrameType.HELLO, encode_hello(role, wire_seed, authenticated))
        peer_role, peer_seed, peer_auth = decode_hello(endpoint.expect(FrameType.HELLO).payload)
    else:
        peer_role, peer_seed, peer_auth = decode_hello(endpoint.expect(FrameType.HELLO).payload)
        endpoint.send_message(FrameType.HELLO, encode_hello(role, wire_seed, authenticated))
    if peer_role is role:
        raise ProtocolError(f"both parties claim role {role.value}")
    if peer_auth != authenticated:
        raise ProtocolError("authentication mode mismatch")
    if authenticated:
        return seed
    if role is Role.B:
        if peer_seed is None:
            raise ProtocolError("public-input HELLO without a seed")
        return peer_seed
    return seed


def _check_wire_params(params: TpmParams) -> None:
    if params.b != 8 * BP_PAYLOAD:
        raise ValueError(f"the wire format carries {8 * BP_PAYLOAD}-bit packages, got b={params.b}")


def send_package(session: Session, endpoint: Endpoint) -> BitPackage:
    package = session.produce_package()
    endpoint.send_message(FrameType.BP, package.to_bytes())
    return package


def receive_package(session: Session, endpoint: Endpoint) -> BitPackage:
    frame = endpoint.expect(FrameType.BP)
    return BitPackage.from_bytes(frame.payload, session.rx_packages, session.params.b)


def send_ack(package: BitPackage, endpoint: Endpoint) -> None:
    endpoint.send_message(FrameType.BP_ACK, _U32.pack(package.seq))


def receive_ack(sent: BitPackage, endpoint: Endpoint) -> None:
    frame = endpoint.expect(FrameType.BP_ACK)
    if len(frame.payload) != 4 or _U32.unpack(frame.payload)[0] != sent.seq:
        raise ProtocolError(f"BP_ACK does not acknowledge package {sent.seq}")


def exchange_round(session: Session, endpoint: Endpoint) -> Status:
    """One lock-step round for a party that owns its own thread."""
    sent = send_package(session, endpoint)
    peer = receive_package(session, endpoint)
    send_ack(peer, endpoint)
    receive_ack(sent, endpoint)
    return session.absorb_package(peer)


class SessionPair:
    """Both parties driven from one thread over a loopback channel.

    Frames are produced in exactly the per-direction order a party would
    produce on its own, so transcripts match a two-thread socket run.
    """

    def __init__(self, a: Session, b: Session, endpoints=None):
        if a.params.role is b.params.role:
            raise ValueError("sessions must hold opposite roles")
        self.a, self.b = (a, b) if a.params.role is Role.A else (b, a)
        self.ep_a, self.ep_b = endpoints if endpoints is not None else channel_pair()

    def handshake(self, seed: int, authenticated: bool = False) -> None:
        wire_seed = None if authenticated else seed
        self.ep_a.send_message(FrameType.HELLO, encode_hello(Role.A, wire_seed, authenticated))
        decode_hello(self.ep_b.expect(FrameType.HELLO).payload)
        self.ep_b.send_message(FrameType.HELLO, encode_hello(Role.B, None, authenticated))
        decode_hello(self.ep_a.expect(FrameType.HELLO).payload)

    def round(self) -> tuple[Status, Status]:
        sent_a = send_package(self.a, self.ep_a)
        sent_b = send_package(self.b, self.ep_b)
        peer_a = receive_package(self.a, self.ep_a)
        peer_b = receive_package(self.b, self.ep_b)
        send_ack(peer_a, self.ep_a)
        send_ack(peer_b, self.ep_b)
        receive_ack(sent_a, self.ep_a)
        receive_ack(sent_b, self.ep_b)
        return self.a.absorb_package(peer_a), self.b.absorb_package(peer_b)

    def run_until_synchronized(self) -> tuple[Status, Status]:
        while True:
            sa, sb = self.round()
            if sa is not Status.RUNNING or sb is not Status.RUNNING:
                return sa, sb

    def close(self) -> None:
        self.ep_a.close()
        self.ep_b.close()


@dataclass
class ExchangeResult:
    key_a: KeyMaterial
    key_b: KeyMaterial
    iterations: int
    detected_at: int
    packages: int
    transcript_a: list[bytes] = field(default_factory=list, repr=False)
    transcript_b: list[bytes] = field(default_factory=list, repr=False)


def _initial_weights(params, weights, rng):
    if weights is not None:
        return np.asarray(weights, dtype=tpm.WEIGHT_DTYPE)
    return tpm.init_weights(rng, params)


def run_party(endpoint: Endpoint, params: TpmParams, weights: np.ndarray, seed: int | None, *,
              authenticated: bool = False) -> Session:
    """Handshake and synchronize one party; raises :class:`SyncError` on watchdog expiry."""
    _check_wire_params(params)
    input_seed = handshake(endpoint, params.role, seed, authenticated)
    session = Session(params, weights, input_seed).start()
    while True:
        status = exchange_round(session, endpoint)
        if status is Status.SYNCHRONIZED:
            return session
        if status is Status.FAILED:
            raise SyncError(session.total_iterations)


def run_key_exchange(params_a: TpmParams, params_b: TpmParams, seed: int, transport: str = "loopback", *,
                     weights_a=None, weights_b=None, rng: np.random.Generator | None = None,
                     authenticated: bool = False, timeout: float = 60.0) -> ExchangeResult:
    """Run one complete key exchange between two in-process parties.

    ``transport`` is ``"loopback"`` (single thread, in-memory) or
    ``"socket"`` (two threads talking TCP over 127.0.0.1).
    """
    if Role(params_a.role) is not Role.A or Role(params_b.role) is not Role.B:
        raise ValueError("params_a must have role A and params_b role B")
    if not params_a.compatible_with(params_b):
        raise ValueError("parties must share K, N, L, b, t_min and tie-break mode")
    _check_wire_params(params_a)
    rng = rng if rng is not None else np.random.default_rng()
    wa = _initial_weights(params_a, weights_a, rng)
    wb = _initial_weights(params_b, weights_b, rng)

    if transport == "loopback":
        pair = SessionPair(Session(params_a, wa, seed).start(), Session(params_b, wb, seed).start())
        pair.handshake(seed, authenticated)
        status, _ = pair.run_until_synchronized()
        a, b = pair.a, pair.b
        ep_a, ep_b = pair.ep_a, pair.ep_b
        pair.close()
        if status is Status.FAILED or b.failed:
            raise SyncError(a.total_iterations)
    elif transport == "socket":
        listener = Listener("127.0.0.1:0")
        results: dict[str, object] = {}

        def party(name, make_endpoint, params, weights):
            try:
                with make_endpoint() as ep:
                    results[name] = (run_party(ep, params, weights, seed, authenticated=authenticated), ep)
            except BaseException as exc:  # re-raised in the caller's thread
                results[name] = exc

        tb = threading.Thread(target=party, args=("b", lambda: listener.accept(timeout), params_b, wb))
        ta = threading.Thread(target=party, args=("a", lambda: connect(listener.address), params_a, wa))
        tb.start()
        ta.start()
        ta.join(timeout)
        tb.join(timeout)
        if ta.is_alive() or tb.is_alive():
            raise TransportError("socket exchange did not finish in time")
        for name in ("a", "b"):
            if isinstance(results[name], BaseException):
                raise results[name]
        (a, ep_a), (b, ep_b) = results["a"], results["b"]
    else:
        raise ValueError(f"unknown transport {transport!r}")

    return ExchangeResult(a.key_queue.history[0], b.key_queue.history[0], a.total_iterations,
                          a.detected_at, a.tx_packages, list(ep_a.transcript), list(ep_b.transcript))


# -- continuous rekeying ------------------------------------------------------

class RekeyService:
    """REQ_KEY / KEY_CHA / KEY_COM handshake toward a local key consumer.

    ``pump`` advances synchronization by one round and returns this party's
    :class:`Status`.  Keys come from the session's queue; when it is empty
    the service pumps until the next key appears.  After a commit the
    service pumps ahead until ``depth`` keys are queued again, unless
    ``max_keys`` keys have already been handed out.
    """

    def __init__(self, session: Session, endpoint: Endpoint, pump: Callable[[], Status], *,
                 depth: int = 1, max_keys: int | None = None):
        if not session.continuous:
            raise ValueError("rekeying needs a session in continuous mode")
        self.session = session
        self.endpoint = endpoint
        self.pump = pump
        self.depth = depth
        self.max_keys = max_keys
        self.next_id = 1
        self.outstanding: tuple[int, KeyMaterial] | None = None
        self.granted: dict[int, KeyMaterial] = {}
        self.delivered = 0

    def fill(self, want: int = 1) -> None:
        while len(self.session.key_queue) < want and not self.session.failed:
            self.pump()

    def handle(self, ftype: FrameType, payload: bytes) -> tuple[FrameType, bytes] | None:
        if ftype == FrameType.REQ_KEY:
            if self.outstanding is not None:
                raise ProtocolError(f"req_key while key {self.outstanding[0]} is uncommitted")
            if not len(self.session.key_queue):
                self.fill()
            key = self.session.key_queue.pop()
            if key is None:
                return FrameType.SYNC_ERROR, _U32.pack(self.session.total_iterations & 0xFFFFFFFF)
            key_id = self.next_id
            self.next_id += 1
            self.outstanding = (key_id, key)
            self.granted[key_id] = key
            return FrameType.KEY_CHA, _U32.pack(key_id) + key.data[:8]
        if ftype == FrameType.KEY_COM:
            if self.outstanding is None:
                raise ProtocolError("key_com without an outstanding key")
            if payload and (len(payload) != 4 or _U32.unpack(payload)[0] != self.outstanding[0]):
                raise ProtocolError(f"key_com for unknown key id {payload.hex()}")
            self.outstanding = None
            self.delivered += 1
            if self.max_keys is None or self.delivered < self.max_keys:
                self.fill(self.depth)
            return None
        raise ProtocolError(f"unexpected {FrameType(ftype).name} on the key interface")

    def serve_one(self) -> None:
        frame = self.endpoint.receive()
        reply = self.handle(frame.type, frame.payload)
        if reply is not None:
            self.endpoint.send_message(*reply)


class KeyConsumer:
    """Stub encryption unit: requests keys and commits them once in use."""

    def __init__(self, endpoint: Endpoint, service: RekeyService):
        self.endpoint = endpoint
        self.service = service

    def request_key(self) -> tuple[int, KeyMaterial]:
        self.endpoint.send_message(FrameType.REQ_KEY)
        self.service.serve_one()
        frame = self.endpoint.receive()
        if frame.type == FrameType.SYNC_ERROR:
            raise SyncError(_U32.unpack(frame.payload)[0])
        if frame.type != FrameType.KEY_CHA:
            raise ProtocolError(f"expected KEY_CHA, got {frame.type.name}")
        key_id = _U32.unpack_from(frame.payload)[0]
        return key_id, self.service.granted[key_id]

    def commit(self, key_id: int | None = None) -> None:
        self.endpoint.send_message(FrameType.KEY_COM, b"" if key_id is None else _U32.pack(key_id))
        self.service.serve_one()

    def next_key(self) -> KeyMaterial:
        key_id, key = self.request_key()
        self.commit(key_id)
        return key


def attach_consumer(session: Session, pump: Callable[[], Status], **kwargs) -> KeyConsumer:
    consumer_ep, service_ep = channel_pair()
    return KeyConsumer(consumer_ep, RekeyService(session, service_ep, pump, **kwargs))
