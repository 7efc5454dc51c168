"""The client (holder of f and the private data) and the honest label-owning server."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .. import tensor as T
from ..dp import AccountantState, AdamParams, BudgetExhausted, DpConfig, check_budget, dp_client_step
from ..nn import AdamState, Network, adam_step
from ..tensor import Tape, Tensor
from .session import ClientSession


class LabelMismatch(ValueError):
    pass


@dataclass
class ClientStep:
    iteration: int
    server_metric: np.ndarray
    grad_norm: float


class SplitClient:
    """Runs f on private batches and applies the (optionally private) update.

    ``preprocess`` is applied to the raw batch before f, e.g. PCA compression.
    Only f's output ever leaves this object.
    """

    def __init__(self, f: Network, lr: float = 1e-4, dp: Optional[DpConfig] = None, seed: int = 0,
                 preprocess: Optional[Callable[[np.ndarray], np.ndarray]] = None):
        self.f = f
        self.dp = dp
        self.adam = AdamParams(lr=lr)
        self.adam_state = AdamState.zeros(f.num_params)
        self.accountant = AccountantState()
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
        self.preprocess = preprocess

    def smash(self, x: np.ndarray, trace: bool = False) -> Tensor:
        if self.preprocess is not None:
            x = self.preprocess(x)
        return self.f.forward(x, trace=trace)

    def iteration(self, session: ClientSession, iteration: int, x: np.ndarray) -> ClientStep:
        """One training round: send f(x), receive the gradient, update f.

        Raises ``BudgetExhausted`` (after closing the session with BYE) when the
        privacy budget does not cover another step.
        """
        if self.dp is not None:
            try:
                check_budget(self.dp, self.accountant)
            except BudgetExhausted:
                session.close()
                raise
        batch = len(x)
        with Tape():
            smashed = self.smash(x, trace=self.dp is not None)
            grad, metric = session.exchange(iteration, smashed.data)
            T.backward(T.sum(T.mul(smashed, Tensor(grad))))
            params = self.f.param_vector()
            if self.dp is not None:
                # the server loss is a batch mean, so each row carries a 1/B factor
                per_example = self.f.per_example_grads() * batch
                params, self.adam_state, self.accountant = dp_client_step(
                    params, per_example, self.dp, self.adam_state, self.accountant, self.rng, self.adam)
            else:
                params, self.adam_state = adam_step(params, self.f.grad_vector(), self.adam_state,
                                                    self.adam.lr, self.adam.beta1, self.adam.beta2,
                                                    self.adam.eps)
        self.f.set_param_vector(params)
        self.f.zero_grad()
        return ClientStep(iteration, metric, float(np.linalg.norm(grad)))

    def query(self, session: ClientSession, x: np.ndarray) -> np.ndarray:
        """Send f(x) for evaluation and return the server's reply."""
        with T.no_grad():
            features = self.smash(x).data
        return session.query(features)


class HonestServer:
    """Completes the forward pass with a classification head and trains it."""

    def __init__(self, head: Network, labels_for: Callable[[int], np.ndarray], lr: float = 1e-3):
        self.head = head
        self.labels_for = labels_for
        self.lr = lr
        self.adam_state = AdamState.zeros(head.num_params)

    def server_step(self, smashed: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, float, float]:
        """Cross-entropy step on the head; returns (gradient w.r.t. smashed, loss, accuracy)."""
        labels = np.asarray(labels)
        if len(labels) != len(smashed):
            raise LabelMismatch(f"{len(labels)} labels for a batch of {len(smashed)}")
        with Tape():
            s = Tensor(smashed, requires_grad=True)
            logits = self.head(s)
            loss = T.softmax_cross_entropy(logits, labels)
            T.backward(loss)
        acc = float(np.mean(np.argmax(logits.data, axis=1) == labels))
        new, self.adam_state = adam_step(self.head.param_vector(), self.head.grad_vector(),
                                         self.adam_state, self.lr)
        self.head.set_param_vector(new)
        self.head.zero_grad()
        return s.grad, loss.item(), acc

    def on_smashed(self, iteration, smashed):
        grad, loss, acc = self.server_step(smashed, self.labels_for(iteration))
        return grad, np.array([loss, acc])

    def on_query(self, iteration, features):
        with T.no_grad():
            return self.head(features).data
