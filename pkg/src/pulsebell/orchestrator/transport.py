"""Ordered, reliable, bidirectional message channels.

Two implementations share one interface: in-process queues and stream
sockets carrying frames with a 4-byte big-endian length prefix.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
from typing import Protocol

from .messages import Message, decode

HEADER = struct.Struct(">I")
MAX_FRAME = 1 << 20


class TransportClosed(ConnectionError):
    pass


class Transport(Protocol):
    def send(self, msg: Message) -> None: ...

    def recv(self, timeout: float | None = None) -> Message | None:
        """Next message, or None when ``timeout`` seconds pass without one."""
        ...

    def close(self) -> None: ...


_CLOSE = object()


class QueueTransport:
    def __init__(self, inbox: queue.Queue, outbox: queue.Queue):
        self._in = inbox
        self._out = outbox
        self._closed = False

    def send(self, msg: Message) -> None:
        if self._closed:
            raise TransportClosed("transport closed")
        # round-trip through the wire format so both transports see identical messages
        self._out.put(msg.encode())

    def recv(self, timeout: float | None = None) -> Message | None:
        if self._closed:
            raise TransportClosed("transport closed")
        try:
            item = self._in.get(timeout=timeout)
        except queue.Empty:
            return None
        if item is _CLOSE:
            self._closed = True
            raise TransportClosed("peer closed")
        return decode(item)

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._out.put(_CLOSE)


def inproc_pair() -> tuple[QueueTransport, QueueTransport]:
    q1: queue.Queue = queue.Queue()
    q2: queue.Queue = queue.Queue()
    return QueueTransport(q1, q2), QueueTransport(q2, q1)


def encode_frame(msg: Message) -> bytes:
    body = msg.encode().encode("utf-8")
    if len(body) > MAX_FRAME:
        raise ValueError("frame too large")
    return HEADER.pack(len(body)) + body


class SocketTransport:
    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._buf = bytearray()
        self._send_lock = threading.Lock()

    def send(self, msg: Message) -> None:
        with self._send_lock:
            try:
                self._sock.sendall(encode_frame(msg))
            except OSError as exc:
                raise TransportClosed(str(exc)) from exc

    def _fill(self, n: int, timeout: float | None) -> bool:
        self._sock.settimeout(timeout)
        while len(self._buf) < n:
            try:
                chunk = self._sock.recv(65536)
            except socket.timeout:
                return False
            except OSError as exc:
                raise TransportClosed(str(exc)) from exc
            if not chunk:
                raise TransportClosed("peer closed")
            self._buf += chunk
        return True

    def recv(self, timeout: float | None = None) -> Message | None:
        # a timeout may leave a partial frame buffered; the next call resumes it
        if not self._fill(HEADER.size, timeout):
            return None
        (length,) = HEADER.unpack_from(self._buf)
        if length > MAX_FRAME:
            raise TransportClosed(f"frame of {length} bytes exceeds limit")
        if not self._fill(HEADER.size + length, timeout):
            return None
        body = bytes(self._buf[HEADER.size:HEADER.size + length])
        del self._buf[:HEADER.size + length]
        return decode(body.decode("utf-8"))

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def parse_addr(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)
