"""Feature-space hijacking: a malicious server that steers f into an invertible space.

Each iteration the server (1) trains the autoencoder f_inv(f_tilde(.)) on a
public batch, (2) trains the discriminator to tell f_tilde(x_pub) from the
client's smashed batch, and (3) returns the gradient of a loss that rewards the
client for fooling the discriminator. The client then moves f towards
f_tilde's feature space, where f_inv decodes it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import BatchSchedule, EmptyPublicSet
from .nn import Adam, FeatureSpaceMismatch, ModelBundle
from .tensor import Tape, Tensor

LOSS_VARIANTS = ("wasserstein_gp", "bce")


@dataclass
class AttackConfig:
    loss: str = "wasserstein_gp"
    gp_weight: float = 10.0
    lr_autoencoder: float = 1e-3
    lr_discriminator: float = 1e-3
    batch_size: int = 64
    d_steps: int = 1

    def __post_init__(self):
        if self.loss not in LOSS_VARIANTS:
            raise ValueError(f"unknown loss variant {self.loss!r}; expected one of {LOSS_VARIANTS}")
        if self.gp_weight < 0:
            raise ValueError("gp_weight must be non-negative")
        if self.d_steps < 1:
            raise ValueError("d_steps must be at least 1")


def reconstruction_error(private_batch, reconstructed) -> float:
    """Mean squared difference over batch and pixels."""
    a = np.asarray(private_batch, dtype=np.float64)
    b = np.asarray(reconstructed, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def per_example_error(private_batch, reconstructed) -> np.ndarray:
    a = np.asarray(private_batch, dtype=np.float64)
    b = np.asarray(reconstructed, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return ((a - b) ** 2).reshape(len(a), -1).mean(axis=1)


@dataclass
class AttackState:
    bundle: ModelBundle
    x_pub: np.ndarray
    config: AttackConfig
    seed: int = 0
    ae_log: list = field(default_factory=list)
    d_log: list = field(default_factory=list)
    recon_log: list = field(default_factory=list)


class FshaServer:
    """Server actor mounting the attack; exposes the session handler interface."""

    def __init__(self, bundle: ModelBundle, x_pub: np.ndarray, config: AttackConfig = AttackConfig(),
                 seed: int = 0):
        x_pub = np.asarray(x_pub, dtype=np.float64)
        if len(x_pub) == 0:
            raise EmptyPublicSet("the attacker needs a non-empty public dataset")
        if x_pub.shape[1:] != bundle.f_tilde.input_shape:
            raise FeatureSpaceMismatch(
                f"public data shape {x_pub.shape[1:]} does not fit f_tilde input {bundle.f_tilde.input_shape}")
        self.state = AttackState(bundle, x_pub, config, seed)
        self.opt_tilde = Adam(bundle.f_tilde, lr=config.lr_autoencoder)
        self.opt_inv = Adam(bundle.f_inv, lr=config.lr_autoencoder)
        self.opt_d = Adam(bundle.d, lr=config.lr_discriminator)
        self.schedule = BatchSchedule(len(x_pub), min(config.batch_size, len(x_pub)), seed)
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA77AC]))
        self._step = 0

    @property
    def bundle(self) -> ModelBundle:
        return self.state.bundle

    def _check(self, smashed: np.ndarray) -> None:
        if tuple(smashed.shape[1:]) != self.bundle.feature_shape:
            raise FeatureSpaceMismatch(
                f"smashed shape {smashed.shape[1:]} differs from the feature space {self.bundle.feature_shape}")

    def public_batch(self) -> np.ndarray:
        idx = self.schedule.indices(self._step)
        self._step += 1
        return self.state.x_pub[idx]

    # -- sub-updates ----------------------------------------------------------

    def autoencoder_step(self, x_pub: np.ndarray) -> float:
        b = self.bundle
        with Tape():
            loss = T.mse(b.f_inv(b.f_tilde(x_pub)), Tensor(x_pub))
            T.backward(loss)
        self.opt_tilde.step()
        self.opt_inv.step()
        return loss.item()

    def discriminator_loss(self, pub_features: np.ndarray, smashed: np.ndarray) -> Tensor:
        """Loss minimised by D; f_tilde outputs count as real."""
        d = self.bundle.d
        cfg = self.state.config
        if cfg.loss == "bce":
            return T.add(T.mean(T.softplus(T.neg(d(pub_features)))), T.mean(T.softplus(d(smashed))))
        loss = T.sub(T.mean(d(smashed)), T.mean(d(pub_features)))
        if cfg.gp_weight > 0:
            n = len(smashed)
            eps = self.rng.uniform(size=(n,) + (1,) * (smashed.ndim - 1))
            mixed = Tensor(eps * pub_features + (1 - eps) * smashed, requires_grad=True)
            (g,) = T.grad(T.sum(d(mixed)), [mixed], create_graph=True)
            norms = T.sqrt(T.add(T.sum(T.mul(g, g).reshape(n, -1), axis=1), 1e-12))
            penalty = T.mean(T.mul(T.sub(norms, 1.0), T.sub(norms, 1.0)))
            loss = T.add(loss, T.scale(penalty, cfg.gp_weight))
        return loss

    def discriminator_step(self, pub_features: np.ndarray, smashed: np.ndarray) -> float:
        with Tape():
            loss = self.discriminator_loss(pub_features, smashed)
            self.bundle.d.zero_grad()
            T.backward(loss)
        self.opt_d.step()
        return loss.item()

    def client_loss(self, smashed: Tensor) -> Tensor:
        """The loss the client is steered to minimise: it rewards looking like f_tilde output."""
        logits = self.bundle.d(smashed)
        if self.state.config.loss == "bce":
            return T.mean(T.softplus(T.neg(logits)))  # -log sigmoid(D)
        return T.neg(T.mean(logits))

    def client_gradient(self, smashed: np.ndarray) -> np.ndarray:
        self._check(smashed)
        with Tape():
            s = Tensor(smashed, requires_grad=True)
            (g,) = T.grad(self.client_loss(s), [s])
        return g.data

    def attacker_iteration(self, smashed: np.ndarray) -> np.ndarray:
        """All three sub-updates; returns the gradient sent back to the client."""
        smashed = np.asarray(smashed, dtype=np.float64)
        self._check(smashed)
        x_pub = self.public_batch()
        self.state.ae_log.append(self.autoencoder_step(x_pub))
        with T.no_grad():
            pub_features = self.bundle.f_tilde(x_pub).data
        for _ in range(self.state.config.d_steps):
            self.state.d_log.append(self.discriminator_step(pub_features, smashed))
        return self.client_gradient(smashed)

    def reconstruct(self, smashed: np.ndarray) -> np.ndarray:
        smashed = np.asarray(smashed, dtype=np.float64)
        self._check(smashed)
        with T.no_grad():
            out = self.bundle.f_inv(smashed).data
        return np.clip(out, 0.0, 1.0)

    # -- session handler --------------------------------------------------------

    def on_smashed(self, iteration, smashed):
        recon = self.reconstruct(smashed)
        grad = self.attacker_iteration(smashed)
        return grad, recon.ravel()

    def on_query(self, iteration, features):
        return self.reconstruct(features)
