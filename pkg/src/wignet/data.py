"""Dataset ingestion, augmentation, and the denoising patch pipeline.

CIFAR-format binaries: each record is one label byte (10-class) or a
coarse+fine label pair (100-class; the fine label is used) followed by 3072
pixel bytes in R,G,B planes; pixels are rescaled to [0,1] and reordered to
(C,H,W).  PGM/PPM loading covers binary P5/P6 at maxval 255 only.  Noise
synthesis adds per-pixel Gaussian noise at a sigma drawn on the 8-bit scale
and clips to [0,1], matching 8-bit acquisition.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ShapeError

CIFAR_PIXELS = 3072
RECORD_SIZE = {10: 1 + CIFAR_PIXELS, 100: 2 + CIFAR_PIXELS}


@dataclass
class LabeledImageSet:
    """Images (N,3,H,W) scaled to [0,1] plus integer labels in [0,K)."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise ShapeError(
                f"{self.images.shape[0]} images vs {self.labels.shape[0]} labels"
            )

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, idx) -> "LabeledImageSet":
        return LabeledImageSet(self.images[idx], self.labels[idx], self.num_classes)


@dataclass
class DenoisePair:
    """A clean patch and its noise-corrupted version, both (1,P,P) in [0,1]."""

    clean: np.ndarray
    noisy: np.ndarray
    sigma: float


def _cifar_files(path) -> list:
    path = os.fspath(path)
    if os.path.isdir(path):
        names = sorted(f for f in os.listdir(path) if f.endswith(".bin"))
        train = [f for f in names if f.startswith("data_batch")]
        names = train or names
        if not names:
            raise FormatError(f"no .bin files under {path}")
        return [os.path.join(path, f) for f in names]
    return [path]


def load_cifar(path, variant: int = 10, dtype=np.float32) -> LabeledImageSet:
    """Read CIFAR-format binary records from a file or directory of files."""
    if variant not in RECORD_SIZE:
        raise ValueError(f"variant must be 10 or 100, got {variant}")
    rec = RECORD_SIZE[variant]
    images = []
    labels = []
    for fname in _cifar_files(path):
        with open(fname, "rb") as f:
            raw = f.read()
        if len(raw) % rec != 0:
            raise FormatError(
                f"{fname}: truncated record at byte {len(raw) - len(raw) % rec}"
            )
        buf = np.frombuffer(raw, dtype=np.uint8).reshape(-1, rec)
        lab = buf[:, 1] if variant == 100 else buf[:, 0]  # 100-class: fine label
        bad = np.nonzero(lab >= variant)[0]
        if bad.size:
            raise FormatError(f"{fname}: label {int(lab[bad[0]])} out of range "
                              f"[0,{variant}) at record {int(bad[0])}")
        px = buf[:, rec - CIFAR_PIXELS:].reshape(-1, 3, 32, 32)
        images.append(px)
        labels.append(lab)
    imgs = np.concatenate(images).astype(dtype) / dtype(255)
    return LabeledImageSet(imgs, np.concatenate(labels).astype(np.int64), variant)


def augment(img: np.ndarray, rng: np.random.Generator,
            max_shift: int = 4) -> np.ndarray:
    """Geometric + photometric: horizontal flip (p=0.5), zero-padded shift up
    to +/-max_shift px, brightness scale in [0.9,1.1] clipped to [0,1]."""
    out = img
    if rng.random() < 0.5:
        out = out[:, :, ::-1]
    dy = int(rng.integers(-max_shift, max_shift + 1))
    dx = int(rng.integers(-max_shift, max_shift + 1))
    if dy or dx:
        shifted = np.zeros_like(out)
        h, w = out.shape[1], out.shape[2]
        ys, yd = (dy, 0) if dy >= 0 else (0, -dy)
        xs, xd = (dx, 0) if dx >= 0 else (0, -dx)
        shifted[:, ys:h - yd, xs:w - xd] = out[:, yd:h - ys, xd:w - xs]
        out = shifted
    scale = rng.uniform(0.9, 1.1)
    if scale != 1.0:
        out = np.clip(out * out.dtype.type(scale), 0, 1)
    return np.ascontiguousarray(out)


def add_noise(clean: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """clean + N(0, sigma/255) per pixel, clipped to [0,1]; sigma is on the
    8-bit scale."""
    if sigma == 0:
        return clean.copy()
    noisy = clean + rng.normal(0.0, sigma / 255.0, size=clean.shape)
    return np.clip(noisy, 0.0, 1.0).astype(clean.dtype)


def sample_denoise_batch(images, batch: int, patch: int, sigma_range,
                         rng: np.random.Generator) -> list:
    """Draw `batch` random crops with per-patch uniform sigma in sigma_range.

    Images smaller than the patch in either extent are skipped with a
    warning flag; an empty usable set is an error.
    """
    lo, hi = float(sigma_range[0]), float(sigma_range[1])
    if not (0 <= lo <= hi):
        raise ValueError(f"bad sigma range [{lo},{hi}]")
    usable = []
    skipped = 0
    for img in images:
        arr = np.asarray(img)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.shape[-2] >= patch and arr.shape[-1] >= patch:
            usable.append(arr)
        else:
            skipped += 1
    if skipped:
        warnings.warn(f"{skipped} source image(s) smaller than {patch}x{patch} skipped",
                      stacklevel=2)
    if not usable:
        raise ValueError(f"no source image is at least {patch}x{patch}")
    pairs = []
    for _ in range(batch):
        img = usable[int(rng.integers(0, len(usable)))]
        y = int(rng.integers(0, img.shape[-2] - patch + 1))
        x = int(rng.integers(0, img.shape[-1] - patch + 1))
        clean = np.ascontiguousarray(img[:, y:y + patch, x:x + patch])
        sigma = float(rng.uniform(lo, hi))
        pairs.append(DenoisePair(clean, add_noise(clean, sigma, rng), sigma))
    return pairs


def stack_pairs(pairs) -> tuple:
    clean = np.stack([p.clean for p in pairs])
    noisy = np.stack([p.noisy for p in pairs])
    return clean, noisy


# ---------------------------------------------------------------------------
# netpbm (binary P5 / P6, maxval 255)
# ---------------------------------------------------------------------------

def _read_pnm_token(buf: bytes, pos: int) -> tuple:
    while pos < len(buf):
        c = buf[pos:pos + 1]
        if c == b"#":
            nl = buf.find(b"\n", pos)
            pos = len(buf) if nl < 0 else nl + 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < len(buf) and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError(f"unexpected end of header at byte {pos}")
    return buf[start:pos], pos


def load_pgm_ppm(path, dtype=np.float32) -> np.ndarray:
    """Binary P5 -> (1,H,W), binary P6 -> (3,H,W); values scaled to [0,1]."""
    with open(path, "rb") as f:
        buf = f.read()
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported netpbm magic {magic!r} (binary P5/P6 only)")
    channels = 1 if magic == b"P5" else 3
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_pnm_token(buf, pos)
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval} (8-bit only)")
    pos += 1  # single whitespace after maxval
    need = width * height * channels
    raster = buf[pos:pos + need]
    if len(raster) != need:
        raise FormatError(f"raster truncated at byte {pos + len(raster)} "
                          f"(expected {need} bytes)")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return (arr.transpose(2, 0, 1).astype(dtype) / dtype(255))


def save_pgm_ppm(path, img: np.ndarray) -> None:
    """Quantize [0,1] float planes back to 8-bit and write canonical headers."""
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ShapeError(f"image must be (1,H,W) or (3,H,W), got {np.asarray(img).shape}")
    q = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    magic = b"P5" if arr.shape[0] == 1 else b"P6"
    header = magic + f"\n{arr.shape[2]} {arr.shape[1]}\n255\n".encode("ascii")
    payload = q.transpose(1, 2, 0).tobytes()
    from .serialize import atomic_write_bytes

    atomic_write_bytes(path, header + payload)
