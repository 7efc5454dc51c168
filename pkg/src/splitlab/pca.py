"""PCA compression of client inputs, applied before they reach ``f``."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class PcaError(ValueError):
    pass


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray  # d
    components: np.ndarray  # k x d, orthonormal rows, descending variance
    explained_variance: np.ndarray  # k

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def d(self) -> int:
        return self.components.shape[1]


def pca_fit(data: np.ndarray, k: int) -> PcaModel:
    """Top-``k`` principal components of the rows of ``data`` (n x d).

    Uses the d x d covariance, or the n x n Gram matrix when n < d. Each
    component is signed so its largest-magnitude coordinate is positive.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        x = x.reshape(len(x), -1)
    n, d = x.shape
    if n < 2:
        raise PcaError("need at least two samples")
    if not 1 <= k <= d:
        raise PcaError(f"k must lie in [1, {d}], got {k}")
    mean = x.mean(axis=0)
    xc = x - mean
    if not np.any(xc):
        raise PcaError("data is constant; covariance is zero")
    if n < d:
        gram = xc @ xc.T / (n - 1)
        vals, vecs = np.linalg.eigh(gram)
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
        keep = min(k, n)
        vals_k = np.clip(vals[:keep], 0, None)
        comps = (xc.T @ vecs[:, :keep]).T
        norms = np.linalg.norm(comps, axis=1)
        ok = norms > 1e-12 * max(norms.max(), 1.0)
        comps = comps[ok] / norms[ok][:, None]
        vals_k = vals_k[ok]
        if len(comps) < k:
            # pad with an orthonormal completion; these directions carry no variance
            q, _ = np.linalg.qr(np.concatenate([comps.T, np.eye(d)], axis=1))
            extra = q[:, len(comps):k].T
            comps = np.concatenate([comps, extra])
            vals_k = np.concatenate([vals_k, np.zeros(k - len(vals_k))])
    else:
        cov = xc.T @ xc / (n - 1)
        vals, vecs = np.linalg.eigh(cov)
        order = np.argsort(vals)[::-1][:k]
        vals_k = np.clip(vals[order], 0, None)
        comps = vecs[:, order].T
    idx = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(len(comps)), idx])
    comps = comps * signs[:, None]
    return PcaModel(mean, np.ascontiguousarray(comps), vals_k)


def project(model: PcaModel, x: np.ndarray) -> np.ndarray:
    """Unclamped reconstruction from the retained components."""
    flat = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    if flat.shape[1] != model.d:
        raise PcaError(f"input dimension {flat.shape[1]} does not match model dimension {model.d}")
    coeffs = (flat - model.mean) @ model.components.T
    return (model.mean + coeffs @ model.components).reshape(np.shape(x))


def compress_reconstruct(model: PcaModel, images: np.ndarray) -> np.ndarray:
    """Project images onto the components and back, clamped into [0, 1]."""
    return np.clip(project(model, images), 0.0, 1.0)


def save_pca(model: PcaModel, path) -> None:
    """Header (d, k as little-endian u32) then mean, components, variances as f64."""
    path = Path(path)
    payload = struct.pack("<II", model.d, model.k) + b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes()
        for a in (model.mean, model.components, model.explained_variance)
    )
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def load_pca(path) -> PcaModel:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise PcaError("truncated PCA file")
    d, k = struct.unpack("<II", raw[:8])
    need = 8 + 8 * (d + k * d + k)
    if len(raw) != need:
        raise PcaError(f"PCA file has {len(raw)} bytes, expected {need}")
    arr = np.frombuffer(raw, dtype="<f8", offset=8).astype(np.float64)
    return PcaModel(arr[:d].copy(), arr[d:d + k * d].reshape(k, d).copy(), arr[d + k * d:].copy())
