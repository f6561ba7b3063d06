"""Dataset ingestion, preprocessing, splitting and synthetic generation.

Images come from binary PGM (P5) / PPM (P6) files or from a single-file
archive (magic ``CADS``).  Preprocessing scales pixels to [0,1] and
resizes bilinearly with half-pixel-center alignment.  Splits are
stratified per class with per-class test counts of exactly
floor(test_fraction * class_count), drawn from a seeded PCG64 generator
so they reproduce across runs.

The synthetic generator stands in for real scan data at desk scale: class
0 images carry 1-3 soft bright blobs, class 1 images a concentric ring
texture, both over matched noisy backgrounds so simple intensity
statistics do not separate the classes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ImageFormatError",
    "ArchiveError",
    "Dataset",
    "SplitIndices",
    "load_image",
    "ensure_channels",
    "resize_bilinear",
    "normalize_pixels",
    "stratified_split",
    "generate_synthetic_dataset",
    "write_dataset_archive",
    "read_dataset_archive",
    "load_image_directory",
    "ARCHIVE_MAGIC",
    "ARCHIVE_VERSION",
]


class ImageFormatError(ValueError):
    """Unsupported or malformed image file."""


class ArchiveError(ValueError):
    """Malformed dataset archive; the message carries the byte offset."""


@dataclass
class Dataset:
    images: np.ndarray          # (N, S, S, C) float32 in [0, 1]
    labels: np.ndarray          # (N,) integer class ids
    class_names: list[str]
    source: str

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N,S,S,C), got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise ValueError(
                f"{len(self.images)} images but {len(self.labels)} labels")
        k = len(self.class_names)
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= k):
            raise ValueError(f"labels out of range for {k} classes")
        lo, hi = float(self.images.min()), float(self.images.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"pixel values outside [0,1]: min={lo}, max={hi}")

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class SplitIndices:
    train: np.ndarray
    test: np.ndarray
    seed: int
    test_fraction: float


# ---------------------------------------------------------------------------
# image files

def _parse_pnm_header(data: bytes, path) -> tuple[bytes, int, int, int, int]:
    """Returns (magic, width, height, maxval, payload offset)."""
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"{path}: unsupported magic {magic!r} (want P5 or P6)")
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(data):
            raise ImageFormatError(f"{path}: truncated header")
        ch = data[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isdigit():
            start = pos
            while pos < len(data) and data[pos:pos + 1].isdigit():
                pos += 1
            fields.append(int(data[start:pos]))
        else:
            raise ImageFormatError(f"{path}: unexpected byte {ch!r} in header")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ImageFormatError(f"{path}: missing whitespace after maxval")
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: bad dimensions/maxval {fields}")
    return magic, width, height, maxval, pos


def load_image(path) -> np.ndarray:
    """Load a binary PGM/PPM file as (h, w, 1|3) float32 scaled to [0, 1]."""
    data = Path(path).read_bytes()
    magic, width, height, maxval, pos = _parse_pnm_header(data, path)
    channels = 1 if magic == b"P5" else 3
    sample_dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    expected = width * height * channels * sample_dtype.itemsize
    payload = data[pos:]
    if len(payload) != expected:
        raise ImageFormatError(
            f"{path}: payload size mismatch, expected {expected} bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=sample_dtype).reshape(height, width, channels)
    return (arr.astype(np.float32) / np.float32(maxval)).astype(np.float32)


def ensure_channels(img: np.ndarray, channels: int = 3) -> np.ndarray:
    """Replicate grayscale to the requested channel count."""
    if img.shape[2] == channels:
        return img
    if img.shape[2] == 1:
        return np.repeat(img, channels, axis=2)
    raise ValueError(f"cannot convert {img.shape[2]} channels to {channels}")


def resize_bilinear(img: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinear resize with half-pixel-center alignment; identity when sizes match."""
    h, w, _ = img.shape
    th, tw = target
    if (h, w) == (th, tw):
        return img.copy()
    ys = np.clip((np.arange(th) + 0.5) * (h / th) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(tw) + 0.5) * (w / tw) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    src = img.astype(np.float64)
    top = (1 - wx) * src[y0][:, x0] + wx * src[y0][:, x1]
    bottom = (1 - wx) * src[y1][:, x0] + wx * src[y1][:, x1]
    return ((1 - wy) * top + wy * bottom).astype(img.dtype)


def normalize_pixels(img: np.ndarray) -> np.ndarray:
    """Scale 8-bit-range values to [0, 1] by dividing by 255."""
    return (np.asarray(img, dtype=np.float32) / np.float32(255.0)).astype(np.float32)


# ---------------------------------------------------------------------------
# splitting

def stratified_split(labels, test_fraction: float = 0.2, seed: int = 0) -> SplitIndices:
    """Per class, a seeded shuffle sends exactly floor(f * n_c) samples to test.

    Deterministic for a given seed (PCG64).  Indices are returned sorted;
    train and test are disjoint and together cover every sample.
    """
    labels = np.asarray(labels)
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    train_parts, test_parts = [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if idx.size == 0:
            raise ValueError(f"class {cls} has no samples")
        perm = rng.permutation(idx)
        n_test = int(test_fraction * idx.size)
        test_parts.append(perm[:n_test])
        train_parts.append(perm[n_test:])
    return SplitIndices(
        train=np.sort(np.concatenate(train_parts)).astype(np.int64),
        test=np.sort(np.concatenate(test_parts)).astype(np.int64),
        seed=seed,
        test_fraction=test_fraction,
    )


# ---------------------------------------------------------------------------
# synthetic data

def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    base = rng.uniform(0.20, 0.45)
    return base + rng.normal(0.0, 0.06, size=(size, size))


def _blob_image(rng: np.random.Generator, size: int) -> np.ndarray:
    img = _background(rng, size)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for _ in range(int(rng.integers(1, 4))):
        cy = rng.uniform(0.2 * size, 0.8 * size)
        cx = rng.uniform(0.2 * size, 0.8 * size)
        sigma = rng.uniform(0.07, 0.16) * size
        amp = rng.uniform(0.30, 0.55)
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        img += amp * np.exp(-d2 / (2.0 * sigma * sigma))
    return img


def _ring_image(rng: np.random.Generator, size: int) -> np.ndarray:
    img = _background(rng, size)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy = rng.uniform(0.3 * size, 0.7 * size)
    cx = rng.uniform(0.3 * size, 0.7 * size)
    wavelength = rng.uniform(4.5, 9.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    amp = rng.uniform(0.30, 0.55)
    envelope_sigma = rng.uniform(0.25, 0.45) * size
    r = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    rings = 0.5 * (1.0 + np.cos(2.0 * np.pi * r / wavelength + phase))
    img += amp * rings * np.exp(-(r * r) / (2.0 * envelope_sigma * envelope_sigma))
    return img


def generate_synthetic_dataset(n_per_class: int, size: int = 32, seed: int = 0) -> Dataset:
    """Two-class synthetic image set: blobs (class 0) vs rings (class 1).

    Deterministic per seed; grayscale replicated to 3 channels; values
    clipped to [0, 1].
    """
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    if size < 16:
        raise ValueError(f"size must be >= 16, got {size}")
    rng = np.random.default_rng(seed)
    images = np.empty((2 * n_per_class, size, size, 1), dtype=np.float32)
    for i in range(n_per_class):
        images[i, :, :, 0] = _blob_image(rng, size)
    for i in range(n_per_class):
        images[n_per_class + i, :, :, 0] = _ring_image(rng, size)
    np.clip(images, 0.0, 1.0, out=images)
    labels = np.repeat([0, 1], n_per_class)
    return Dataset(
        images=np.repeat(images, 3, axis=3),
        labels=labels,
        class_names=["blobs", "rings"],
        source=f"synthetic:{seed}",
    )


# ---------------------------------------------------------------------------
# dataset archive (single file, little-endian, magic CADS)

ARCHIVE_MAGIC = b"CADS"
ARCHIVE_VERSION = 1


def write_dataset_archive(ds: Dataset, path) -> None:
    n, s, s2, channels = ds.images.shape
    if s != s2:
        raise ValueError(f"archive requires square images, got {ds.images.shape}")
    with open(path, "wb") as f:
        f.write(ARCHIVE_MAGIC)
        f.write(struct.pack("<IIIII", ARCHIVE_VERSION, n, s, channels,
                            len(ds.class_names)))
        for name in ds.class_names:
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
        f.write(ds.labels.astype("<u2").tobytes())
        f.write(np.ascontiguousarray(ds.images, dtype="<f4").tobytes())


def read_dataset_archive(path) -> Dataset:
    with open(path, "rb") as f:
        data = f.read()

    offset = 0

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(data):
            raise ArchiveError(
                f"truncated archive: needed {n} bytes for {what} at offset {offset}")
        chunk = data[offset:offset + n]
        offset += n
        return chunk

    magic = take(4, "magic")
    if magic != ARCHIVE_MAGIC:
        raise ArchiveError(f"bad magic {magic!r} at offset 0")
    version, n, s, channels, n_classes = struct.unpack("<IIIII", take(20, "header"))
    if version != ARCHIVE_VERSION:
        raise ArchiveError(f"unsupported version {version} at offset 4")
    class_names = []
    for i in range(n_classes):
        (length,) = struct.unpack("<H", take(2, f"class name {i} length"))
        class_names.append(take(length, f"class name {i}").decode("utf-8"))
    labels = np.frombuffer(take(2 * n, "labels"), dtype="<u2").astype(np.int64)
    if n and labels.max() >= n_classes:
        raise ArchiveError(
            f"label {int(labels.max())} out of range for {n_classes} classes")
    pixels = np.frombuffer(take(4 * n * s * s * channels, "pixel payload"),
                           dtype="<f4").reshape(n, s, s, channels)
    if offset != len(data):
        raise ArchiveError(
            f"trailing data: {len(data) - offset} unexpected bytes at offset {offset}")
    return Dataset(images=pixels.astype(np.float32), labels=labels,
                   class_names=class_names, source=str(path))


# ---------------------------------------------------------------------------
# directory ingest (root/<class_name>/*.pgm|*.ppm)

def load_image_directory(root, size: int | None = None) -> Dataset:
    root = Path(root)
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise ValueError(f"no class subdirectories under {root}")
    images, labels, class_names = [], [], []
    for label, class_dir in enumerate(class_dirs):
        class_names.append(class_dir.name)
        files = sorted(list(class_dir.glob("*.pgm")) + list(class_dir.glob("*.ppm")))
        if not files:
            raise ValueError(f"class directory {class_dir} contains no .pgm/.ppm files")
        for file in files:
            img = ensure_channels(load_image(file), 3)
            if size is not None:
                img = resize_bilinear(img, (size, size))
            images.append(np.clip(img, 0.0, 1.0))
            labels.append(label)
    return Dataset(images=np.stack(images), labels=np.asarray(labels),
                   class_names=class_names, source=str(root))
