"""Split-learning wire protocol, transports, sessions and the honest roles."""

from .actors import ClientStep, HonestServer, LabelMismatch, SplitClient
from .messages import (
    MAX_FRAME,
    PROTOCOL_VERSION,
    FrameTooLarge,
    Kind,
    PayloadMismatch,
    ProtocolError,
    SplitMessage,
    TruncatedFrame,
    UnknownKind,
    VersionMismatch,
    batch_message,
    decode,
    encode,
    payload_text,
    text_payload,
)
from .session import (
    ClientSession,
    HandshakeError,
    OrderViolation,
    PeerError,
    ServerSession,
    SessionState,
)
from .transport import (
    QUEUE_CAPACITY,
    QueueTransport,
    SocketTransport,
    TcpListener,
    Transport,
    TransportError,
    inproc_pair,
    tcp_connect,
)

__all__ = [name for name in dir() if not name.startswith("_")]
