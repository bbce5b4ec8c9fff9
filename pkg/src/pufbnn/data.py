"""Dataset ingestion: IDX files, input binarization, synthetic digits.

load_idx reads the standard MNIST IDX container (big-endian magic and
dimension header, raw ubyte payload), transparently decompressing gzip.
synthetic_digits renders a deterministic 28x28 ten-class digit corpus from
fixed glyph bitmaps with jitter, stroke thickening and pixel noise; it is
the stand-in benchmark when the real MNIST files are not on disk and is
written and read through the same IDX code path.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from .bitops import BipolarVec, bools_to_pm1
from .errors import BadMagicError, CountMismatchError, TruncatedFileError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Flat grayscale images (N, 784) with labels (N,) in 0..9."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise CountMismatchError(
                f"{self.images.shape[0]} images vs {self.labels.shape[0]} labels"
            )
        self.images.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.images[:n], self.labels[:n])


def _read_file(path) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        if head == b"\x1f\x8b":
            with gzip.open(fh) as gz:
                return gz.read()
        return fh.read()


def _parse_idx(raw: bytes, expected_magic: int, path) -> tuple[np.ndarray, tuple]:
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: only {len(raw)} bytes, header needs 4")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise BadMagicError(
            f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: header needs {header} bytes, got {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = header + int(np.prod(dims))
    if len(raw) < expected:
        raise TruncatedFileError(
            f"{path}: expected {expected} bytes for dims {dims}, got {len(raw)}"
        )
    data = np.frombuffer(raw, dtype=np.uint8, offset=header, count=int(np.prod(dims)))
    return data.reshape(dims), dims


def load_idx(images_path, labels_path) -> Dataset:
    """Parse an IDX image/label file pair into a Dataset."""
    images, idims = _parse_idx(_read_file(images_path), IMAGE_MAGIC, images_path)
    labels, _ = _parse_idx(_read_file(labels_path), LABEL_MAGIC, labels_path)
    if idims[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{idims[0]} images in {images_path} vs {labels.shape[0]} labels "
            f"in {labels_path}"
        )
    return Dataset(images.reshape(idims[0], -1).copy(), labels.copy())


def write_idx(dataset: Dataset, images_path, labels_path, side: int = 28, compress: bool = False):
    """Write a Dataset back out as an IDX image/label file pair."""
    n = len(dataset)
    img_blob = struct.pack(">IIII", IMAGE_MAGIC, n, side, side) + dataset.images.tobytes()
    lbl_blob = struct.pack(">II", LABEL_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    opener = gzip.open if compress else open
    with opener(images_path, "wb") as fh:
        fh.write(img_blob)
    with opener(labels_path, "wb") as fh:
        fh.write(lbl_blob)


def binarize_batch(images: np.ndarray, t_pix: float = 0.5) -> np.ndarray:
    """Map grayscale rows to {-1,+1}: pixel/255 > t_pix becomes +1."""
    return bools_to_pm1(np.asarray(images) / 255.0 > t_pix)


def binarize_input(image: np.ndarray, t_pix: float = 0.5) -> BipolarVec:
    """Binarize one flat image into a packed bipolar vector."""
    return BipolarVec.from_bools(np.asarray(image).ravel() / 255.0 > t_pix)


# 7x5 glyph bitmaps for the synthetic fallback corpus.
_GLYPHS = [
    "01110 10001 10011 10101 11001 10001 01110",
    "00100 01100 00100 00100 00100 00100 01110",
    "01110 10001 00001 00110 01000 10000 11111",
    "11111 00010 00100 00110 00001 10001 01110",
    "00010 00110 01010 10010 11111 00010 00010",
    "11111 10000 11110 00001 00001 10001 01110",
    "00110 01000 10000 11110 10001 10001 01110",
    "11111 00001 00010 00100 01000 01000 01000",
    "01110 10001 10001 01110 10001 10001 01110",
    "01110 10001 10001 01111 00001 00010 01100",
]


def _glyph_array(digit: int) -> np.ndarray:
    rows = _GLYPHS[digit].split()
    return np.array([[c == "1" for c in row] for row in rows], dtype=bool)


def _render(digit: int, rng: np.random.Generator) -> np.ndarray:
    glyph = _glyph_array(digit)
    scale = int(rng.integers(2, 4))  # stroke scale 2 or 3
    big = np.kron(glyph, np.ones((scale, scale), dtype=bool))
    if rng.random() < 0.35:  # thicken strokes
        shifted = np.zeros_like(big)
        shifted[:, 1:] = big[:, :-1]
        big = big | shifted
    big = big & (rng.random(big.shape) > 0.08)  # stroke dropout
    h, w = big.shape
    canvas = np.zeros((28, 28), dtype=np.float64)
    # centered like MNIST digits, with a small placement jitter
    dy = (28 - h) // 2 + int(rng.integers(-2, 3))
    dx = (28 - w) // 2 + int(rng.integers(-2, 3))
    intensity = rng.uniform(145, 255)
    canvas[dy : dy + h, dx : dx + w] = big * intensity
    canvas += rng.normal(0, 26, size=canvas.shape)
    flip = rng.random(canvas.shape) < 0.03  # salt-and-pepper
    canvas[flip] = 255 - canvas[flip]
    return np.clip(canvas, 0, 255).astype(np.uint8)


def synthetic_digits(n_per_class: int, seed: int = 0) -> Dataset:
    """Deterministic balanced digit corpus: n_per_class samples per class."""
    rng = np.random.default_rng(seed)
    n = 10 * n_per_class
    images = np.empty((n, 784), dtype=np.uint8)
    labels = np.empty(n, dtype=np.uint8)
    order = rng.permutation(n)
    for i, slot in enumerate(order):
        digit = i % 10
        images[slot] = _render(digit, rng).ravel()
        labels[slot] = digit
    return Dataset(images, labels)


_MNIST_NAMES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_idx_pair(data_dir, split: str = "test"):
    """Locate the standard MNIST file pair (optionally .gz) in a directory."""
    img_name, lbl_name = _MNIST_NAMES[split]
    pair = []
    for name in (img_name, lbl_name):
        hit = None
        for cand in (name, name + ".gz"):
            p = os.path.join(data_dir, cand)
            if os.path.exists(p):
                hit = p
                break
        if hit is None:
            return None
        pair.append(hit)
    return tuple(pair)


def load_split(data_dir, split: str = "test") -> Dataset:
    """Load one MNIST-style split from a directory with standard names."""
    pair = find_idx_pair(data_dir, split)
    if pair is None:
        raise FileNotFoundError(
            f"no {split} IDX pair ({'/'.join(_MNIST_NAMES[split])}[.gz]) in {data_dir}"
        )
    return load_idx(*pair)
