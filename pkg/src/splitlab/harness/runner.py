"""Run one experiment: data preparation, both actors, metrics and artefacts."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..attack import FshaServer, per_example_error, reconstruction_error
from ..data import BatchSchedule, linearly_separable, load_dataset, make_split
from ..dp import BudgetExhausted, privacy_report
from ..nn import build_bundle, model_preset
from ..pca import compress_reconstruct, pca_fit
from ..protocol import (
    ClientSession,
    HonestServer,
    ServerSession,
    SplitClient,
    TcpListener,
    inproc_pair,
    tcp_connect,
)
from .config import ExperimentConfig
from .grid import emit_grid

log = logging.getLogger(__name__)

CSV_HEADER = ("iteration", "metric", "value", "wallclock_ms")
QUERY_CHUNK = 1000


class DatasetMissing(FileNotFoundError):
    pass


@dataclass
class PreparedData:
    """Everything both roles need; each role reads only its own fields."""

    image_shape: tuple
    x_train: np.ndarray  # client: private training images
    y_train: np.ndarray  # honest server: labels of the client's images
    x_eval: np.ndarray  # client: held-out private images for evaluation
    y_eval: np.ndarray
    x_pub: Optional[np.ndarray] = None  # attacker: public images


@dataclass
class ExperimentReport:
    rows: list = field(default_factory=list)
    privacy: dict = field(default_factory=dict)
    grids: list = field(default_factory=list)
    truncated: bool = False
    stopped_at: Optional[int] = None
    eval_mse: dict = field(default_factory=dict)
    class_mse: dict = field(default_factory=dict)
    test_accuracy: Optional[float] = None
    out_dir: Optional[str] = None

    def values(self, metric: Optional[str] = None) -> np.ndarray:
        return np.array([r[2] for r in self.rows if metric is None or r[1] == metric])

    def summary(self) -> dict:
        return {
            "rows": len(self.rows),
            "truncated": self.truncated,
            "stopped_at": self.stopped_at,
            "eval_mse": {str(k): v for k, v in self.eval_mse.items()},
            "class_mse": {str(k): v for k, v in self.class_mse.items()},
            "test_accuracy": self.test_accuracy,
            "grids": self.grids,
            "privacy": self.privacy,
        }


# -- data --------------------------------------------------------------------

def _images(cfg: ExperimentConfig, split: str):
    if cfg.dataset == "toy-separable":
        dim = cfg.image_size * cfg.image_size
        n_train = cfg.n_train or 4000
        x, y = linearly_separable(n_train + cfg.n_test, dim=dim, seed=cfg.seed)
        x = x.reshape(-1, cfg.image_size, cfg.image_size)
        return (x[:n_train], y[:n_train]) if split == "train" else (x[n_train:], y[n_train:])
    try:
        x, y = load_dataset(cfg.dataset, split, cfg.data_dir, cfg.image_size)
    except FileNotFoundError as exc:
        raise DatasetMissing(f"{cfg.dataset} ({split}) not found: {exc.filename}") from None
    if split == "train" and cfg.n_train and cfg.n_train < len(x):
        idx = np.sort(np.random.default_rng([cfg.seed, 17]).choice(len(x), cfg.n_train, replace=False))
        x, y = x[idx], y[idx]
    if split == "test":
        x, y = x[:cfg.n_test], y[:cfg.n_test]
    return x, y


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    x, y = _images(cfg, "train")
    x = x[:, None]  # single channel
    shape = x.shape[1:]
    if cfg.server_mode == "honest":
        xt, yt = _images(cfg, "test")
        return PreparedData(shape, x, y, xt[:, None], yt)
    split = make_split(x, y, cfg.priv_fraction, cfg.excluded_classes, cfg.seed)
    n_eval = min(cfg.eval_size, len(split.x_priv) // 5)
    return PreparedData(shape, split.x_priv[n_eval:], split.y_priv[n_eval:],
                        split.x_priv[:n_eval], split.y_priv[:n_eval], split.x_pub)


def build_models(cfg: ExperimentConfig, image_shape):
    return build_bundle(model_preset(cfg.model, image_shape), cfg.seed)


def make_handler(cfg: ExperimentConfig, data: PreparedData, bundle):
    if cfg.server_mode == "honest":
        sched = BatchSchedule(len(data.y_train), cfg.batch_size, cfg.seed)
        return HonestServer(bundle.head, lambda i: data.y_train[sched.indices(i)], lr=cfg.lr_server)
    attack = cfg.attack
    if attack.batch_size != cfg.batch_size:
        attack = type(attack)(**{**attack.__dict__, "batch_size": cfg.batch_size})
    return FshaServer(bundle, data.x_pub, attack, seed=cfg.seed)


def make_preprocess(cfg: ExperimentConfig, data: PreparedData):
    if cfg.defense is None:
        return None
    model = pca_fit(data.x_train.reshape(len(data.x_train), -1), cfg.defense.pca_k)
    return lambda x: compress_reconstruct(model, x)


# -- actors ------------------------------------------------------------------

def serve(cfg: ExperimentConfig, transport, handler, feature_shape) -> int:
    session = ServerSession(transport, cfg.dataset, feature_shape)
    session.handshake()
    return session.serve(handler)


def _query(client: SplitClient, session: ClientSession, x: np.ndarray) -> np.ndarray:
    out = [client.query(session, x[i:i + QUERY_CHUNK]) for i in range(0, len(x), QUERY_CHUNK)]
    return np.concatenate(out).reshape(len(x), -1)


def run_client(cfg: ExperimentConfig, transport, data: PreparedData, bundle) -> ExperimentReport:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dp = None
    if cfg.dp is not None:
        dp = cfg.dp.build(cfg.batch_size / len(data.x_train), cfg.iterations)
    client = SplitClient(bundle.f, lr=cfg.lr_client, dp=dp, seed=cfg.seed,
                         preprocess=make_preprocess(cfg, data))
    session = ClientSession(transport, cfg.dataset, bundle.feature_shape)
    session.handshake()
    sched = BatchSchedule(len(data.x_train), cfg.batch_size, cfg.seed)
    report = ExperimentReport(out_dir=str(out))
    metric = "recon_mse" if cfg.server_mode == "fsha" else "loss"
    start = time.perf_counter()
    window = []

    def checkpoint(done: int) -> None:
        recon = _query(client, session, data.x_eval).reshape(data.x_eval.shape)
        report.eval_mse[done] = reconstruction_error(data.x_eval, recon)
        k = min(cfg.grid_size, len(recon))
        path = emit_grid(data.x_eval[:k], recon[:k], out / f"grid_{done}.pgm")
        report.grids.append(path.name)

    done = 0
    for i in range(cfg.iterations):
        x = data.x_train[sched.indices(i)]
        try:
            step = client.iteration(session, i, x)
        except BudgetExhausted as exc:
            log.warning("stopping early at iteration %d: %s", i, exc)
            report.truncated, report.stopped_at = True, i
            break
        done = i + 1
        if cfg.server_mode == "fsha":
            window.append(reconstruction_error(x, step.server_metric.reshape(x.shape)))
        else:
            window.append(float(step.server_metric[0]))
        if done % cfg.metric_stride == 0:
            wall = 0 if cfg.deterministic else int(round(1000 * (time.perf_counter() - start)))
            report.rows.append((done, metric, float(np.mean(window)), wall))
            window = []
        if cfg.server_mode == "fsha" and done % cfg.dump_every == 0 and done != cfg.iterations:
            checkpoint(done)

    if not report.truncated:
        if cfg.server_mode == "fsha":
            checkpoint(done)
            recon = _query(client, session, data.x_eval).reshape(data.x_eval.shape)
            errs = per_example_error(data.x_eval, recon)
            report.class_mse = {int(c): float(errs[data.y_eval == c].mean()) for c in np.unique(data.y_eval)}
        else:
            logits = _query(client, session, data.x_eval)
            report.test_accuracy = float(np.mean(np.argmax(logits, axis=1) == data.y_eval))
        session.close()
    report.privacy = privacy_report(dp, client.accountant)
    write_outputs(report, cfg)
    return report


# -- outputs -----------------------------------------------------------------

def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def format_value(v: float) -> str:
    return repr(float(v))


def write_outputs(report: ExperimentReport, cfg: ExperimentConfig) -> None:
    out = Path(cfg.out_dir)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for it, metric, value, wall in report.rows:
        writer.writerow((it, metric, format_value(value), wall))
    _atomic_write(out / "metrics.csv", buf.getvalue())
    _atomic_write(out / "privacy.json", json.dumps(report.privacy, indent=2, sort_keys=True) + "\n")
    summary = dict(report.summary(), config=cfg.to_dict())
    _atomic_write(out / "report.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")


# -- orchestration -----------------------------------------------------------

def run(cfg: ExperimentConfig, role: str = "both") -> Optional[ExperimentReport]:
    """Run ``cfg``. ``role`` is "both" (one process) or "client"/"server" (TCP peers)."""
    cfg.validate()
    data = prepare_data(cfg)
    bundle = build_models(cfg, data.image_shape)
    if role == "server":
        handler = make_handler(cfg, data, bundle)
        listener = TcpListener(cfg.host, cfg.port)
        log.info("server listening on %s:%d", *listener.address)
        try:
            with listener.accept() as transport:
                serve(cfg, transport, handler, bundle.feature_shape)
        finally:
            listener.close()
        return None
    if role == "client":
        with tcp_connect(cfg.host, cfg.port, timeout=60) as transport:
            return run_client(cfg, transport, data, bundle)
    if role != "both":
        raise ValueError(f"unknown role {role!r}")

    handler = make_handler(cfg, data, bundle)
    errors = []
    listener = None
    if cfg.transport == "inproc":
        client_end, server_end = inproc_pair()
        server_ready = lambda: server_end  # noqa: E731
    else:
        listener = TcpListener(cfg.host, cfg.port)
        server_ready = lambda: listener.accept(timeout=60)  # noqa: E731

    def server_main():
        try:
            transport = server_ready()
            try:
                serve(cfg, transport, handler, bundle.feature_shape)
            finally:
                transport.close()
        except Exception as exc:  # reported after the client finishes
            errors.append(exc)

    thread = threading.Thread(target=server_main, name="split-server", daemon=True)
    thread.start()
    if listener is not None:
        client_end = tcp_connect(*listener.address)
    try:
        report = run_client(cfg, client_end, data, bundle)
    finally:
        client_end.close()
        thread.join(timeout=60)
        if listener is not None:
            listener.close()
    if errors:
        raise errors[0]
    return report
