"""Message transports: a bounded in-process queue pair and TCP sockets.

Both carry encoded frames, so the two are byte-for-byte interchangeable.
"""

from __future__ import annotations

import queue
import socket
import time
from typing import Optional

from .messages import PREFIX, SplitMessage, decode_body, encode, frame_length

QUEUE_CAPACITY = 4


class TransportError(ConnectionError):
    pass


class Transport:
    """Send and receive whole messages."""

    def send(self, msg: SplitMessage) -> None:
        self.send_frame(encode(msg))

    def recv(self, timeout: Optional[float] = None) -> SplitMessage:
        return decode_body(self.recv_body(timeout))

    def send_frame(self, frame: bytes) -> None:
        raise NotImplementedError

    def recv_body(self, timeout: Optional[float] = None) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


class QueueTransport(Transport):
    """One end of an in-process channel made of two bounded FIFO queues."""

    _CLOSED = b""

    def __init__(self, outbox: queue.Queue, inbox: queue.Queue):
        self.outbox, self.inbox = outbox, inbox
        self.closed = False

    def send_frame(self, frame: bytes) -> None:
        if self.closed:
            raise TransportError("transport is closed")
        self.outbox.put(frame)

    def recv_body(self, timeout=None) -> bytes:
        try:
            frame = self.inbox.get(timeout=timeout)
        except queue.Empty:
            raise TransportError("timed out waiting for the peer") from None
        if frame == self._CLOSED:
            raise TransportError("peer closed the channel")
        length = frame_length(frame)
        return frame[PREFIX.size:PREFIX.size + length]

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            try:
                self.outbox.put_nowait(self._CLOSED)
            except queue.Full:
                pass


def inproc_pair(capacity: int = QUEUE_CAPACITY) -> tuple[QueueTransport, QueueTransport]:
    """(client end, server end) of a fresh in-process channel."""
    a_to_b: queue.Queue = queue.Queue(maxsize=capacity)
    b_to_a: queue.Queue = queue.Queue(maxsize=capacity)
    return QueueTransport(a_to_b, b_to_a), QueueTransport(b_to_a, a_to_b)


class SocketTransport(Transport):
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def send_frame(self, frame: bytes) -> None:
        try:
            self.sock.sendall(frame)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def _recv_exact(self, n: int) -> bytes:
        chunks = []
        while n:
            try:
                chunk = self.sock.recv(min(n, 1 << 20))
            except socket.timeout:
                raise TransportError("timed out waiting for the peer") from None
            except OSError as exc:
                raise TransportError(f"receive failed: {exc}") from exc
            if not chunk:
                raise TransportError("peer closed the connection")
            chunks.append(chunk)
            n -= len(chunk)
        return b"".join(chunks)

    def recv_body(self, timeout=None) -> bytes:
        self.sock.settimeout(timeout)
        length = frame_length(self._recv_exact(PREFIX.size))
        return self._recv_exact(length)

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class TcpListener:
    """Server-side socket; ``port=0`` picks a free port (see ``address``)."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self.sock = socket.create_server((host, port))
        self.address = self.sock.getsockname()[:2]

    def accept(self, timeout: Optional[float] = None) -> SocketTransport:
        self.sock.settimeout(timeout)
        try:
            conn, _ = self.sock.accept()
        except socket.timeout:
            raise TransportError("no client connected in time") from None
        conn.settimeout(None)
        return SocketTransport(conn)

    def close(self) -> None:
        self.sock.close()


def tcp_connect(host: str, port: int, timeout: float = 10.0) -> SocketTransport:
    """Connect, retrying until ``timeout`` so the peer process may start late."""
    deadline = time.monotonic() + timeout
    while True:
        try:
            return SocketTransport(socket.create_connection((host, port), timeout=timeout))
        except OSError as exc:
            if time.monotonic() > deadline:
                raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
            time.sleep(0.05)
