"""Two-row grayscale image grids (originals above reconstructions) as binary PGM."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np


def to_bytes(images: np.ndarray) -> np.ndarray:
    return np.round(255 * np.clip(images, 0.0, 1.0)).astype(np.uint8)


def grid_array(top: np.ndarray, bottom: np.ndarray) -> np.ndarray:
    """Tile two equal batches of H x W (or 1 x H x W) images into a 2H x NW array."""
    top = np.asarray(top, dtype=np.float64)
    bottom = np.asarray(bottom, dtype=np.float64)
    if top.shape != bottom.shape:
        raise ValueError(f"batch shapes differ: {top.shape} vs {bottom.shape}")
    if top.ndim == 4:
        if top.shape[1] != 1:
            raise ValueError("only single-channel images can be written as PGM")
        top, bottom = top[:, 0], bottom[:, 0]
    if top.ndim != 3:
        raise ValueError(f"expected N x H x W images, got shape {top.shape}")
    rows = [np.concatenate(list(batch), axis=1) for batch in (top, bottom)]
    return np.concatenate(rows, axis=0)


def emit_grid(private_batch, reconstructed_batch, path) -> Path:
    """Write the grid as P5 PGM with maxval 255; returns the path."""
    pixels = to_bytes(grid_array(private_batch, reconstructed_batch))
    h, w = pixels.shape
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(f"P5 {w} {h} 255\n".encode("ascii") + pixels.tobytes())
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write image grid {path}: {exc}") from exc
    return path


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    header, _, body = raw.partition(b"\n")
    magic, w, h, maxval = header.split()
    if magic != b"P5" or maxval != b"255":
        raise ValueError(f"{path} is not an 8-bit binary PGM")
    return np.frombuffer(body, dtype=np.uint8).reshape(int(h), int(w))
