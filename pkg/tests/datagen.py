"""Synthetic corpora for tests: CIFAR-format binaries and texture images.

No dataset ships with the repository and the test environment is offline,
so the pipeline tests generate class-structured images (oriented gratings
with per-sample jitter and noise) and write them through the real binary
formats, exercising the actual loaders end to end.
"""

from __future__ import annotations

import os

import numpy as np


def grating_dataset(n: int, classes: int = 10, seed: int = 0):
    """(images uint8 (N,3,32,32), labels (N,)): class k is an oriented
    sinusoid at angle/frequency (k%5, k//5) with random phase, contrast,
    color cast and pixel noise.  Learnable by a small CNN, far from trivial."""
    rng = np.random.Generator(np.random.PCG64(seed))
    yy, xx = np.mgrid[0:32, 0:32].astype(np.float64)
    images = np.empty((n, 3, 32, 32), dtype=np.uint8)
    labels = rng.integers(0, classes, size=n)
    for i in range(n):
        k = int(labels[i])
        theta = (k % 5) * (np.pi / 5) + rng.normal(0, 0.06)
        freq = (2.0 if k < 5 else 4.0) + rng.normal(0, 0.15)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) / 32 + phase)
        contrast = rng.uniform(0.25, 0.45)
        base = 0.5 + contrast * wave
        cast = rng.uniform(0.8, 1.2, size=3)
        img = base[None, :, :] * cast[:, None, None]
        img = img + rng.normal(0, 0.10, size=img.shape)
        images[i] = np.clip(img * 255.0, 0, 255).astype(np.uint8)
    return images, labels.astype(np.uint8)


def write_cifar_file(path, images: np.ndarray, labels: np.ndarray,
                     variant: int = 10) -> str:
    """Write records in the CIFAR binary layout (label byte(s) + RGB planes)."""
    n = images.shape[0]
    rows = []
    for i in range(n):
        if variant == 10:
            head = bytes([int(labels[i])])
        else:
            head = bytes([int(labels[i]) % 20, int(labels[i])])
        rows.append(head + images[i].tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(rows))
    return os.fspath(path)


def make_cifar_dataset(path, n: int, classes: int = 10, seed: int = 0) -> str:
    images, labels = grating_dataset(n, classes, seed)
    return write_cifar_file(path, images, labels, variant=10 if classes == 10 else 100)


def _bilinear_upsample(a: np.ndarray, size: int) -> np.ndarray:
    src = a.shape[0]
    pos = np.linspace(0, src - 1, size)
    i0 = np.floor(pos).astype(int)
    i1 = np.minimum(i0 + 1, src - 1)
    frac = pos - i0
    rows = a[i0] * (1 - frac)[:, None] + a[i1] * frac[:, None]
    cols = rows[:, i0] * (1 - frac)[None, :] + rows[:, i1] * frac[None, :]
    return cols


def texture_images(n: int, size: int = 96, seed: int = 0) -> list:
    """(1,size,size) float images in [0,1]: multi-scale smoothed noise plus a
    slow illumination gradient; a stand-in for natural photographic content."""
    rng = np.random.Generator(np.random.PCG64(seed))
    out = []
    for _ in range(n):
        acc = np.zeros((size, size))
        for grid, weight in ((4, 0.5), (8, 0.3), (16, 0.15), (32, 0.05)):
            acc += weight * _bilinear_upsample(rng.random((grid, grid)), size)
        gx, gy = rng.uniform(-0.2, 0.2, size=2)
        ramp = gx * np.linspace(0, 1, size)[None, :] + gy * np.linspace(0, 1, size)[:, None]
        img = acc + ramp
        img = (img - img.min()) / max(img.max() - img.min(), 1e-9)
        out.append(img[None].astype(np.float32))
    return out
