"""Split-learning messages and their length-prefixed binary framing.

Frame layout (integers big-endian, payload little-endian f64)::

    u32 length of everything that follows
    u8  version
    u8  kind
    u64 iteration
    u32 batch_size
    u32 rank, then rank x u32 dims
    f64 payload values

``shape`` is the per-example shape, so a SMASHED or GRADIENT payload holds
``batch_size * prod(shape)`` values.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

PROTOCOL_VERSION = 1
MAX_FRAME = 64 * 1024 * 1024
PREFIX = struct.Struct(">I")
HEADER = struct.Struct(">BBQII")


class ProtocolError(RuntimeError):
    pass


class TruncatedFrame(ProtocolError):
    pass


class UnknownKind(ProtocolError):
    pass


class VersionMismatch(ProtocolError):
    pass


class FrameTooLarge(ProtocolError):
    pass


class PayloadMismatch(ProtocolError):
    pass


class Kind(enum.IntEnum):
    HELLO = 1
    SMASHED = 2
    GRADIENT = 3
    METRIC = 4
    BYE = 5
    ERROR = 6


SIZED_KINDS = (Kind.SMASHED, Kind.GRADIENT)


@dataclass(eq=False)
class SplitMessage:
    kind: Kind
    iteration: int = 0
    batch_size: int = 0
    shape: tuple = ()
    payload: np.ndarray = field(default_factory=lambda: np.zeros(0))
    version: int = PROTOCOL_VERSION

    def __post_init__(self):
        self.kind = Kind(self.kind)
        self.shape = tuple(int(s) for s in self.shape)
        self.payload = np.ascontiguousarray(self.payload, dtype=np.float64).ravel()

    def check(self) -> None:
        if self.kind in SIZED_KINDS:
            expected = self.batch_size * int(np.prod(self.shape, dtype=np.int64))
            if self.payload.size != expected:
                raise PayloadMismatch(
                    f"{self.kind.name} payload has {self.payload.size} values, shape {self.shape}"
                    f" x batch {self.batch_size} needs {expected}")

    def array(self) -> np.ndarray:
        """Payload as a ``(batch_size, *shape)`` array."""
        return self.payload.reshape((self.batch_size, *self.shape))

    def __eq__(self, other):
        if not isinstance(other, SplitMessage):
            return NotImplemented
        return (self.version == other.version and self.kind == other.kind
                and self.iteration == other.iteration and self.batch_size == other.batch_size
                and self.shape == other.shape
                and self.payload.astype("<f8").tobytes() == other.payload.astype("<f8").tobytes())


def batch_message(kind: Kind, iteration: int, batch: np.ndarray) -> SplitMessage:
    batch = np.asarray(batch, dtype=np.float64)
    return SplitMessage(kind, iteration, batch.shape[0], batch.shape[1:], batch)


def text_payload(text: str) -> np.ndarray:
    """Carry short text (dataset names, error reasons) as one byte per value."""
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float64)


def payload_text(payload: np.ndarray) -> str:
    return bytes(np.asarray(payload, dtype=np.uint8).tolist()).decode("utf-8", errors="replace")


def encode(msg: SplitMessage) -> bytes:
    msg.check()
    if msg.version != PROTOCOL_VERSION:
        raise VersionMismatch(f"cannot encode version {msg.version}")
    body = b"".join((
        HEADER.pack(msg.version, int(msg.kind), msg.iteration, msg.batch_size, len(msg.shape)),
        struct.pack(f">{len(msg.shape)}I", *msg.shape),
        msg.payload.astype("<f8").tobytes(),
    ))
    if len(body) > MAX_FRAME:
        raise FrameTooLarge(f"frame of {len(body)} bytes exceeds the {MAX_FRAME} byte cap")
    return PREFIX.pack(len(body)) + body


def frame_length(prefix: bytes) -> int:
    """Body length announced by a 4-byte prefix, checked against the cap."""
    if len(prefix) < PREFIX.size:
        raise TruncatedFrame("length prefix is truncated")
    (length,) = PREFIX.unpack(prefix[:PREFIX.size])
    if length > MAX_FRAME:
        raise FrameTooLarge(f"announced frame of {length} bytes exceeds the {MAX_FRAME} byte cap")
    return length


def decode(frame: bytes) -> SplitMessage:
    length = frame_length(frame)
    body = frame[PREFIX.size:]
    if len(body) < length:
        raise TruncatedFrame(f"frame announces {length} bytes, {len(body)} present")
    if len(body) > length:
        raise ProtocolError(f"{len(body) - length} trailing bytes after frame")
    return decode_body(body)


def decode_body(body: bytes) -> SplitMessage:
    if len(body) < 1:
        raise TruncatedFrame("empty frame")
    if body[0] != PROTOCOL_VERSION:
        raise VersionMismatch(f"peer speaks version {body[0]}, expected {PROTOCOL_VERSION}")
    if len(body) < HEADER.size:
        raise TruncatedFrame("header is truncated")
    version, kind, iteration, batch_size, rank = HEADER.unpack_from(body)
    try:
        kind = Kind(kind)
    except ValueError:
        raise UnknownKind(f"unknown message kind {kind}") from None
    offset = HEADER.size + 4 * rank
    if len(body) < offset:
        raise TruncatedFrame("shape is truncated")
    shape = struct.unpack_from(f">{rank}I", body, HEADER.size)
    rest = len(body) - offset
    if rest % 8:
        raise TruncatedFrame(f"payload of {rest} bytes is not a whole number of f64 values")
    payload = np.frombuffer(body, dtype="<f8", offset=offset).astype(np.float64)
    msg = SplitMessage(kind, iteration, batch_size, shape, payload, version)
    msg.check()
    return msg
