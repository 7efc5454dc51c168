"""Lock-step client and server session state machines.

One iteration is: client sends SMASHED(i); server answers GRADIENT(i) and then
METRIC(i). Outside iterations the client may send METRIC(i) carrying smashed
evaluation features, answered by one METRIC(i) from the server. Any message out
of that order closes the session with an ERROR frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from .messages import Kind, ProtocolError, SplitMessage, batch_message, payload_text, text_payload
from .transport import Transport

PHASES = ("handshake", "training", "closed")


class OrderViolation(ProtocolError):
    pass


class HandshakeError(ProtocolError):
    pass


class PeerError(ProtocolError):
    """The peer reported an error and closed the session."""


@dataclass
class SessionState:
    role: str
    phase: str = "handshake"
    iteration: int = -1
    feature_shape: tuple = ()

    def advance(self, iteration: int) -> None:
        if iteration <= self.iteration:
            raise OrderViolation(f"iteration {iteration} does not follow {self.iteration}")
        self.iteration = iteration


class _Session:
    role = ""

    def __init__(self, transport: Transport, dataset: str, feature_shape, timeout: Optional[float] = None):
        self.transport = transport
        self.dataset = dataset
        self.timeout = timeout
        self.state = SessionState(self.role, feature_shape=tuple(feature_shape))

    @property
    def phase(self) -> str:
        return self.state.phase

    def _recv(self) -> SplitMessage:
        msg = self.transport.recv(self.timeout)
        if msg.kind == Kind.ERROR:
            self.state.phase = "closed"
            raise PeerError(f"peer error: {payload_text(msg.payload)}")
        return msg

    def fail(self, reason: str, exc_type=OrderViolation):
        """Send ERROR, close the session and raise."""
        if self.state.phase != "closed":
            self.state.phase = "closed"
            try:
                self.transport.send(SplitMessage(Kind.ERROR, max(self.state.iteration, 0),
                                                 payload=text_payload(reason)))
            except (OSError, ProtocolError):
                pass
        raise exc_type(reason)

    def _require(self, phase: str) -> None:
        if self.state.phase != phase:
            raise OrderViolation(f"{self.role} session is in phase {self.state.phase!r}, needs {phase!r}")

    def _hello(self) -> SplitMessage:
        return SplitMessage(Kind.HELLO, 0, 0, self.state.feature_shape, text_payload(self.dataset))


class ClientSession(_Session):
    role = "client"

    def handshake(self) -> None:
        self._require("handshake")
        self.transport.send(self._hello())
        reply = self._recv()
        if reply.kind != Kind.HELLO:
            self.fail(f"expected HELLO, got {reply.kind.name}", HandshakeError)
        self.state.phase = "training"

    def exchange(self, iteration: int, smashed: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Send one smashed batch; return (gradient, server metric payload)."""
        self._require("training")
        smashed = np.asarray(smashed, dtype=np.float64)
        if smashed.shape[1:] != self.state.feature_shape:
            raise ProtocolError(f"smashed shape {smashed.shape[1:]} differs from the negotiated "
                                f"{self.state.feature_shape}")
        self.state.advance(iteration)
        self.transport.send(batch_message(Kind.SMASHED, iteration, smashed))
        grad = self._recv()
        if grad.kind != Kind.GRADIENT or grad.iteration != iteration:
            self.fail(f"expected GRADIENT({iteration}), got {grad.kind.name}({grad.iteration})")
        if grad.shape != smashed.shape[1:] or grad.batch_size != smashed.shape[0]:
            self.fail(f"GRADIENT shape {(grad.batch_size, *grad.shape)} does not match "
                      f"SMASHED shape {smashed.shape}")
        metric = self._recv()
        if metric.kind != Kind.METRIC or metric.iteration != iteration:
            self.fail(f"expected METRIC({iteration}), got {metric.kind.name}({metric.iteration})")
        return grad.array(), metric.payload

    def query(self, features: np.ndarray) -> np.ndarray:
        """Ask the server to process smashed evaluation features; returns its flat reply."""
        self._require("training")
        it = max(self.state.iteration, 0)
        self.transport.send(batch_message(Kind.METRIC, it, features))
        reply = self._recv()
        if reply.kind != Kind.METRIC or reply.iteration != it:
            self.fail(f"expected METRIC({it}), got {reply.kind.name}({reply.iteration})")
        return reply.payload

    def close(self) -> None:
        if self.state.phase != "closed":
            self.state.phase = "closed"
            try:
                self.transport.send(SplitMessage(Kind.BYE, max(self.state.iteration, 0)))
            except (OSError, ProtocolError):
                pass


class ServerHandler(Protocol):
    def on_smashed(self, iteration: int, smashed: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (gradient w.r.t. smashed, metric payload)."""

    def on_query(self, iteration: int, features: np.ndarray) -> np.ndarray:
        """Return the reply to an evaluation query."""


class ServerSession(_Session):
    role = "server"

    def handshake(self) -> None:
        self._require("handshake")
        hello = self._recv()
        if hello.kind != Kind.HELLO:
            self.fail(f"expected HELLO, got {hello.kind.name}", HandshakeError)
        name = payload_text(hello.payload)
        if name != self.dataset:
            self.fail(f"dataset mismatch: client has {name!r}, server expects {self.dataset!r}",
                      HandshakeError)
        if hello.shape != self.state.feature_shape:
            self.fail(f"feature shape mismatch: client {hello.shape}, server {self.state.feature_shape}",
                      HandshakeError)
        self.transport.send(self._hello())
        self.state.phase = "training"

    def serve(self, handler: ServerHandler) -> int:
        """Answer messages until BYE; returns the number of training iterations served."""
        self._require("training")
        served = 0
        while True:
            msg = self._recv()
            if msg.kind == Kind.BYE:
                self.state.phase = "closed"
                return served
            if msg.kind == Kind.SMASHED:
                if msg.shape != self.state.feature_shape:
                    self.fail(f"SMASHED shape {msg.shape} differs from {self.state.feature_shape}",
                              ProtocolError)
                if msg.iteration <= self.state.iteration:
                    self.fail(f"SMASHED({msg.iteration}) after iteration {self.state.iteration}")
                self.state.advance(msg.iteration)
                smashed = msg.array()
                grad, metric = handler.on_smashed(msg.iteration, smashed)
                grad = np.asarray(grad, dtype=np.float64)
                if grad.shape != smashed.shape:
                    self.fail(f"handler returned gradient {grad.shape} for smashed {smashed.shape}",
                              ProtocolError)
                self.transport.send(batch_message(Kind.GRADIENT, msg.iteration, grad))
                self.transport.send(SplitMessage(Kind.METRIC, msg.iteration, payload=metric))
                served += 1
            elif msg.kind == Kind.METRIC:
                reply = handler.on_query(msg.iteration, msg.array())
                self.transport.send(SplitMessage(Kind.METRIC, msg.iteration, payload=np.ravel(reply)))
            else:
                self.fail(f"unexpected {msg.kind.name} from client")
