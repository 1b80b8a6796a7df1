"""Frame format and reliable ordered channels.

Wire layout (big-endian)::

    type:1 | seq:4 | len:2 | payload:len | crc32:4

The check is the standard CRC-32 (reflected 0xEDB88320, init all-ones,
final complement) over everything before it.
"""

from __future__ import annotations

import enum
import queue
import socket
import struct
import threading
import zlib
from dataclasses import dataclass

from .errors import EndOfChannel, FramingError, IntegrityError, ProtocolError, TransportError

HEADER = struct.Struct(">BIH")
CHECK = struct.Struct(">I")
OVERHEAD = HEADER.size + CHECK.size
MAX_PAYLOAD = 1024
BP_PAYLOAD = 4


class FrameType(enum.IntEnum):
    BP = 0x01
    BP_ACK = 0x02
    REQ_KEY = 0x10
    KEY_CHA = 0x11
    KEY_COM = 0x12
    SYNC_ERROR = 0x20
    HELLO = 0x21


@dataclass(frozen=True)
class Frame:
    type: FrameType
    seq: int
    payload: bytes = b""

    def __post_init__(self):
        if not 0 <= self.seq <= 0xFFFFFFFF:
            raise ValueError(f"seq out of range: {self.seq}")


def encode_frame(frame: Frame) -> bytes:
    if len(frame.payload) > MAX_PAYLOAD:
        raise ValueError(f"payload too long: {len(frame.payload)} > {MAX_PAYLOAD}")
    if frame.type == FrameType.BP and len(frame.payload) != BP_PAYLOAD:
        raise ValueError(f"BP frames carry exactly {BP_PAYLOAD} payload bytes")
    body = HEADER.pack(int(frame.type), frame.seq, len(frame.payload)) + bytes(frame.payload)
    return body + CHECK.pack(zlib.crc32(body))


def decode_frame(data: bytes) -> Frame:
    data = bytes(data)
    if len(data) < OVERHEAD:
        raise FramingError(f"truncated frame: {len(data)} bytes")
    ftype, seq, length = HEADER.unpack_from(data)
    if length > MAX_PAYLOAD:
        raise FramingError(f"declared payload length {length} exceeds {MAX_PAYLOAD}")
    if len(data) != OVERHEAD + length:
        raise FramingError(f"length mismatch: header says {length}, frame has {len(data) - OVERHEAD}")
    (check,) = CHECK.unpack_from(data, HEADER.size + length)
    if zlib.crc32(data[: HEADER.size + length]) != check:
        raise IntegrityError("CRC mismatch")
    try:
        ftype = FrameType(ftype)
    except ValueError:
        raise ProtocolError(f"unknown frame type {ftype:#04x}") from None
    payload = data[HEADER.size: HEADER.size + length]
    if ftype == FrameType.BP and length != BP_PAYLOAD:
        raise FramingError(f"BP frame with {length} payload bytes")
    return Frame(ftype, seq, payload)


def parse_address(address: str) -> tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise ValueError(f"address must be host:port, got {address!r}")
    return host, int(port)


class Endpoint:
    """One side of a channel.

    Outgoing frames are numbered 0, 1, 2, ... per direction; incoming frames
    must follow the same rule or :class:`ProtocolError` is raised.  Every
    encoded frame sent is kept in :attr:`transcript`.
    """

    def __init__(self):
        self.tx_seq = 0
        self.rx_seq = 0
        self.transcript: list[bytes] = []
        self.closed = False

    def send(self, frame: Frame) -> None:
        if self.closed:
            raise TransportError("send on closed endpoint")
        if frame.seq != self.tx_seq:
            raise ProtocolError(f"outgoing seq {frame.seq}, expected {self.tx_seq}")
        data = encode_frame(frame)
        self._send_bytes(data)
        self.transcript.append(data)
        self.tx_seq += 1

    def send_message(self, ftype: FrameType, payload: bytes = b"") -> Frame:
        frame = Frame(FrameType(ftype), self.tx_seq, payload)
        self.send(frame)
        return frame

    def receive(self, timeout: float | None = None) -> Frame:
        if self.closed:
            raise TransportError("receive on closed endpoint")
        frame = decode_frame(self._receive_bytes(timeout))
        if frame.seq != self.rx_seq:
            raise ProtocolError(f"sequence gap: got {frame.seq}, expected {self.rx_seq}")
        self.rx_seq += 1
        return frame

    def expect(self, ftype: FrameType, timeout: float | None = None) -> Frame:
        frame = self.receive(timeout)
        if frame.type != ftype:
            raise ProtocolError(f"expected {ftype.name}, got {frame.type.name}")
        return frame

    def close(self) -> None:
        self.closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _send_bytes(self, data: bytes) -> None:
        raise NotImplementedError

    def _receive_bytes(self, timeout: float | None) -> bytes:
        raise NotImplementedError


_CLOSED = object()


class LoopbackEndpoint(Endpoint):
    """In-memory endpoint; frames go through the full encode/decode path."""

    def __init__(self, inbox: queue.SimpleQueue, outbox: queue.SimpleQueue, default_timeout: float = 5.0):
        super().__init__()
        self._inbox = inbox
        self._outbox = outbox
        self._peer_closed = False
        self.default_timeout = default_timeout

    def pending(self) -> bool:
        return not self._inbox.empty()

    def _send_bytes(self, data: bytes) -> None:
        if self._peer_closed:
            raise TransportError("peer closed the channel")
        self._outbox.put(data)

    def _receive_bytes(self, timeout: float | None) -> bytes:
        if self._peer_closed:
            raise EndOfChannel("peer closed the channel")
        try:
            item = self._inbox.get(timeout=self.default_timeout if timeout is None else timeout)
        except queue.Empty:
            raise TransportError("receive timed out") from None
        if item is _CLOSED:
            self._peer_closed = True
            raise EndOfChannel("peer closed the channel")
        return item

    def close(self) -> None:
        if not self.closed:
            self._outbox.put(_CLOSED)
        super().close()


def channel_pair(default_timeout: float = 5.0) -> tuple[LoopbackEndpoint, LoopbackEndpoint]:
    a_to_b: queue.SimpleQueue = queue.SimpleQueue()
    b_to_a: queue.SimpleQueue = queue.SimpleQueue()
    return (LoopbackEndpoint(b_to_a, a_to_b, default_timeout),
            LoopbackEndpoint(a_to_b, b_to_a, default_timeout))


class SocketEndpoint(Endpoint):
    def __init__(self, sock: socket.socket, default_timeout: float | None = 30.0):
        super().__init__()
        self.sock = sock
        self.default_timeout = default_timeout
        self._lock = threading.Lock()
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def _send_bytes(self, data: bytes) -> None:
        try:
            with self._lock:
                self.sock.sendall(data)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def _read_exact(self, n: int) -> bytes:
        chunks = []
        while n:
            try:
                chunk = self.sock.recv(n)
            except socket.timeout:
                raise TransportError("receive timed out") from None
            except OSError as exc:
                raise TransportError(f"receive failed: {exc}") from exc
            if not chunk:
                raise EndOfChannel("peer closed the connection")
            chunks.append(chunk)
            n -= len(chunk)
        return b"".join(chunks)

    def _receive_bytes(self, timeout: float | None) -> bytes:
        self.sock.settimeout(self.default_timeout if timeout is None else timeout)
        header = self._read_exact(HEADER.size)
        (_, _, length) = HEADER.unpack(header)
        if length > MAX_PAYLOAD:
            raise FramingError(f"declared payload length {length} exceeds {MAX_PAYLOAD}")
        return header + self._read_exact(length + CHECK.size)

    def close(self) -> None:
        if not self.closed:
            try:
                self.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self.sock.close()
        super().close()


class Listener:
    """Bound listening socket; ``port 0`` picks a free port (see :attr:`address`)."""

    def __init__(self, address: str):
        host, port = parse_address(address)
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self.sock.bind((host, port))
        except OSError as exc:
            self.sock.close()
            raise TransportError(f"cannot listen on {address}: {exc}") from exc
        self.sock.listen(1)

    @property
    def address(self) -> str:
        host, port = self.sock.getsockname()[:2]
        return f"{host}:{port}"

    def accept(self, timeout: float | None = None) -> SocketEndpoint:
        self.sock.settimeout(timeout)
        try:
            conn, _ = self.sock.accept()
        except socket.timeout:
            raise TransportError("no connection before timeout") from None
        finally:
            self.sock.close()
        return SocketEndpoint(conn)

    def close(self) -> None:
        self.sock.close()


def listen(address: str, timeout: float | None = None) -> SocketEndpoint:
    return Listener(address).accept(timeout)


def connect(address: str, timeout: float = 10.0) -> SocketEndpoint:
    host, port = parse_address(address)
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise TransportError(f"cannot connect to {address}: {exc}") from exc
    return SocketEndpoint(sock)
