"""Offline stand-ins for MNIST and Fashion-MNIST, written as IDX files.

``digits``: the 8x8 handwritten digits bundled with scikit-learn, upscaled to
28x28 and randomly deformed (rotation, shear, scale, shift, stroke width).
Train and test images come from disjoint sets of source digits.

``fashion``: procedurally drawn silhouettes of the ten Fashion-MNIST
categories (0 t-shirt/top ... 8 bag, 9 ankle boot) with random proportions,
shading and texture.

Both follow the real datasets' layout (60000 train / 10000 test, 28x28, uint8)
so they can be swapped for the real files without code changes.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from .data import IDX_FILES, write_idx_images, write_idx_labels

FASHION_CLASSES = ("t-shirt/top", "trouser", "pullover", "dress", "coat",
                   "sandal", "shirt", "sneaker", "bag", "ankle boot")


def _random_affine(img: np.ndarray, rng, rot=12.0, shear=0.15, scale=(0.9, 1.1), shift=1.5):
    h, w = img.shape
    a = math.radians(rng.uniform(-rot, rot))
    s = rng.uniform(*scale)
    sh = rng.uniform(-shear, shear)
    m = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]]) @ np.array([[1, sh], [0, 1]]) / s
    center = np.array([(h - 1) / 2, (w - 1) / 2])
    offset = center - m @ center + rng.uniform(-shift, shift, size=2)
    return ndimage.affine_transform(img, m, offset=offset, order=1, mode="constant")


def _digit_images(n: int, bases: np.ndarray, base_labels: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray]:
    pick = rng.integers(0, len(bases), size=n)
    out = np.empty((n, 28, 28))
    for i, b in enumerate(pick):
        img = np.zeros((28, 28))
        img[4:24, 4:24] = bases[b]
        img = _random_affine(img, rng)
        blur = rng.uniform(0.3, 0.9)
        img = ndimage.gaussian_filter(img, blur)
        img = img / max(img.max(), 1e-6)
        lo = rng.uniform(0.15, 0.3)
        out[i] = np.clip((img - lo) / (0.75 - lo), 0, 1)
    return out, base_labels[pick]


def make_digits(n_train: int = 60000, n_test: int = 10000, seed: int = 0):
    from sklearn.datasets import load_digits

    digits = load_digits()
    bases = np.stack([ndimage.zoom(im / 16.0, 2.5, order=3) for im in digits.images])
    bases = np.clip(bases, 0, 1)
    labels = digits.target.astype(np.int64)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(bases))
    n_base_test = len(bases) // 6
    test_ids, train_ids = order[:n_base_test], order[n_base_test:]
    train = _digit_images(n_train, bases[train_ids], labels[train_ids], rng)
    test = _digit_images(n_test, bases[test_ids], labels[test_ids], rng)
    return train, test


# -- fashion silhouettes (drawn on a 56x56 canvas, pooled to 28x28) ------------

def _u(rng, lo, hi):
    return float(rng.uniform(lo, hi))


def _torso(draw, rng, top, bottom, half, fill, sleeve):
    cx = 28 + _u(rng, -1.5, 1.5)
    shoulder = top + 2
    draw.rectangle([cx - half, shoulder, cx + half, bottom], fill=fill)
    draw.polygon([(cx - half, shoulder), (cx - half + 4, top), (cx + half - 4, top), (cx + half, shoulder)],
                 fill=fill)
    if sleeve == "short":
        ln = _u(rng, 7, 10)
        for sgn in (-1, 1):
            x0 = cx + sgn * half
            draw.polygon([(x0, shoulder), (x0 + sgn * ln, shoulder + 6), (x0 + sgn * (ln - 3), shoulder + 13),
                          (x0, shoulder + 10)], fill=fill)
    elif sleeve == "long":
        drop = _u(rng, 26, 32)
        for sgn in (-1, 1):
            x0 = cx + sgn * half
            draw.polygon([(x0, shoulder), (x0 + sgn * 9, shoulder + drop), (x0 + sgn * 4, shoulder + drop + 2),
                          (x0, shoulder + 12)], fill=fill)
    return cx


def _tshirt(draw, rng, fill):
    cx = _torso(draw, rng, _u(rng, 9, 13), _u(rng, 46, 51), _u(rng, 10, 13), fill, "short")
    draw.ellipse([cx - 5, 7, cx + 5, 15], fill=0)
    if rng.random() < 0.5:
        r = _u(rng, 3, 6)
        cy = _u(rng, 24, 34)
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=int(fill * _u(rng, 0.3, 0.6)))


def _trouser(draw, rng, fill):
    cx = 28 + _u(rng, -1, 1)
    half = _u(rng, 9, 12)
    top, bottom = _u(rng, 3, 7), _u(rng, 50, 54)
    gap = _u(rng, 1, 2.5)
    crotch = _u(rng, 17, 23)
    draw.rectangle([cx - half, top, cx + half, crotch], fill=fill)
    draw.polygon([(cx - half, crotch), (cx - gap, crotch), (cx - gap - 1, bottom), (cx - half - 1, bottom)],
                 fill=fill)
    draw.polygon([(cx + gap, crotch), (cx + half, crotch), (cx + half + 1, bottom), (cx + gap + 1, bottom)],
                 fill=fill)


def _pullover(draw, rng, fill):
    cx = _torso(draw, rng, _u(rng, 9, 12), _u(rng, 44, 49), _u(rng, 10, 13), fill, "long")
    draw.ellipse([cx - 4, 7, cx + 4, 13], fill=0)


def _dress(draw, rng, fill):
    cx = 28 + _u(rng, -1, 1)
    top, waist, bottom = _u(rng, 4, 8), _u(rng, 20, 26), _u(rng, 50, 54)
    wt, ww, wb = _u(rng, 5, 8), _u(rng, 5, 7), _u(rng, 12, 18)
    draw.polygon([(cx - wt, top), (cx + wt, top), (cx + ww, waist), (cx + wb, bottom), (cx - wb, bottom),
                  (cx - ww, waist)], fill=fill)


def _coat(draw, rng, fill):
    cx = _torso(draw, rng, _u(rng, 5, 8), _u(rng, 50, 54), _u(rng, 11, 14), fill, "long")
    draw.line([(cx, 10), (cx, 53)], fill=int(fill * 0.3), width=2)
    draw.polygon([(cx - 6, 6), (cx, 16), (cx + 6, 6)], fill=int(fill * 0.6))


def _shirt(draw, rng, fill):
    cx = _torso(draw, rng, _u(rng, 8, 11), _u(rng, 46, 50), _u(rng, 10, 13), fill, "long")
    draw.polygon([(cx - 5, 7), (cx, 13), (cx + 5, 7)], fill=int(fill * 0.5))
    for y in range(16, 46, 6):
        draw.ellipse([cx - 1, y - 1, cx + 1, y + 1], fill=int(fill * 0.4))
    if rng.random() < 0.5:
        for x in range(int(cx) - 12, int(cx) + 13, 5):
            draw.line([(x, 12), (x, 48)], fill=int(fill * 0.7), width=1)


def _sandal(draw, rng, fill):
    y0 = _u(rng, 36, 42)
    x0, x1 = _u(rng, 3, 7), _u(rng, 49, 53)
    draw.rectangle([x0, y0, x1, y0 + 3], fill=fill)
    for k in range(int(rng.integers(3, 6))):
        x = x0 + 4 + k * (x1 - x0 - 8) / 4
        draw.line([(x, y0), (x + _u(rng, 2, 6), y0 - _u(rng, 8, 14))], fill=fill, width=2)
    draw.line([(x0 + 6, y0 - 10), (x1 - 8, y0 - 6)], fill=fill, width=2)


def _sneaker(draw, rng, fill):
    y_sole = _u(rng, 38, 43)
    x0, x1 = _u(rng, 3, 6), _u(rng, 50, 53)
    top = y_sole - _u(rng, 12, 17)
    draw.polygon([(x0, y_sole), (x0, top + 2), (x0 + 14, top), (x0 + 22, top + 6), (x1 - 6, y_sole - 7),
                  (x1, y_sole - 3), (x1, y_sole + 3), (x0, y_sole + 3)], fill=fill)
    draw.rectangle([x0, y_sole, x1, y_sole + 3], fill=int(min(255, fill * 1.3)))


def _bag(draw, rng, fill):
    x0, x1 = _u(rng, 7, 12), _u(rng, 44, 49)
    y0, y1 = _u(rng, 20, 26), _u(rng, 48, 52)
    draw.rectangle([x0, y0, x1, y1], fill=fill)
    hx = _u(rng, 8, 12)
    mid = (x0 + x1) / 2
    draw.arc([mid - hx, y0 - _u(rng, 12, 17), mid + hx, y0 + 6], 180, 360, fill=fill, width=3)
    if rng.random() < 0.5:
        draw.rectangle([x0 + 3, y0 + 4, x1 - 3, y0 + 8], fill=int(fill * 0.5))


def _boot(draw, rng, fill):
    y_sole = _u(rng, 44, 49)
    x0, x1 = _u(rng, 4, 8), _u(rng, 48, 52)
    shaft_top = _u(rng, 8, 14)
    back = x0 + _u(rng, 14, 20)
    draw.polygon([(x0, shaft_top), (back, shaft_top), (back + 4, y_sole - 14), (x1, y_sole - 6),
                  (x1, y_sole + 3), (x0, y_sole + 3)], fill=fill)
    draw.rectangle([x0, y_sole, x1, y_sole + 3], fill=int(fill * 0.5))


_DRAWERS = (_tshirt, _trouser, _pullover, _dress, _coat, _sandal, _shirt, _sneaker, _bag, _boot)


def _fashion_images(labels: np.ndarray, rng) -> np.ndarray:
    out = np.empty((len(labels), 28, 28))
    for i, lab in enumerate(labels):
        canvas = Image.new("L", (56, 56), 0)
        fill = int(rng.uniform(90, 255))
        _DRAWERS[lab](ImageDraw.Draw(canvas), rng, fill)
        img = np.asarray(canvas, dtype=np.float64) / 255.0
        img = img.reshape(28, 2, 28, 2).mean(axis=(1, 3))
        mask = img > 0.02
        texture = 1 + rng.normal(0, _u(rng, 0.02, 0.12), size=img.shape)
        img = np.where(mask, img * texture, img)
        out[i] = np.clip(_random_affine(img, rng, rot=5, shear=0.05, scale=(0.92, 1.05), shift=1.0), 0, 1)
    return out


def make_fashion(n_train: int = 60000, n_test: int = 10000, seed: int = 0):
    rng = np.random.default_rng(seed)
    y_train = np.arange(n_train) % 10
    y_test = np.arange(n_test) % 10
    rng.shuffle(y_train)
    rng.shuffle(y_test)
    return (_fashion_images(y_train, rng), y_train), (_fashion_images(y_test, rng), y_test)


GENERATORS = {"mnist": make_digits, "fashion-mnist": make_fashion}


def write_synthetic(name: str, data_dir, n_train: int = 60000, n_test: int = 10000, seed: int = 0) -> Path:
    """Generate the stand-in for ``name`` and write it in the standard IDX layout."""
    root = Path(data_dir) / name
    train, test = GENERATORS[name](n_train, n_test, seed)
    for split, (images, labels) in (("train", train), ("test", test)):
        img_file, lab_file = IDX_FILES[split]
        write_idx_images(root / img_file, images)
        write_idx_labels(root / lab_file, labels)
    return root


def ensure_dataset(name: str, data_dir, **kwargs) -> Path:
    """Use existing IDX files under ``data_dir/name``; generate the stand-in otherwise."""
    root = Path(data_dir) / name
    if all((root / f).exists() or (root / (f + ".gz")).exists() for f in IDX_FILES["train"] + IDX_FILES["test"]):
        return root
    return write_synthetic(name, data_dir, **kwargs)
