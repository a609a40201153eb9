"""IDX (MNIST) dataset files: big-endian header, unsigned-byte payload."""

import gzip
import struct
from pathlib import Path
from typing import Union

import numpy as np

from src.nn.dataset import Dataset
from src.utils.logger import get_logger

logger = get_logger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
MAX_LABEL = 9

PathLike = Union[str, Path]

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IDXFormatError(Exception):
    """Raised when an IDX file is malformed."""
    pass


def _read_bytes(path: PathLike) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _parse(path: PathLike, magic: int, ndim: int) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise IDXFormatError(f"{path}: truncated header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IDXFormatError(
            f"{path}: wrong magic 0x{found:08x}, expected 0x{magic:08x}"
        )
    header_size = 4 + 4 * ndim
    if len(raw) < header_size:
        raise IDXFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header_size])
    expected = int(np.prod(dims))
    payload = raw[header_size:]
    if len(payload) < expected:
        raise IDXFormatError(
            f"{path}: truncated payload ({len(payload)} of {expected} bytes)"
        )
    if len(payload) > expected:
        raise IDXFormatError(
            f"{path}: {len(payload) - expected} trailing bytes after the payload"
        )
    return np.frombuffer(payload, dtype=np.uint8, count=expected).reshape(dims)


def read_idx_images(path: PathLike) -> np.ndarray:
    """Raw image bytes as an (N, rows, cols) uint8 array."""
    return _parse(path, IMAGES_MAGIC, 3)


def read_idx_labels(path: PathLike) -> np.ndarray:
    """Raw labels as an (N,) uint8 array."""
    return _parse(path, LABELS_MAGIC, 1)


def load_idx(images_path: PathLike, labels_path: PathLike) -> Dataset:
    """
    Load an image/label file pair.

    Args:
        images_path: IDX3 image file (optionally gzipped)
        labels_path: IDX1 label file (optionally gzipped)

    Returns:
        Dataset with (N, 1, rows, cols) inputs scaled to [0, 1]

    Raises:
        IDXFormatError: On wrong magic, truncated or oversized payload, a label
            above 9 or a count mismatch
        OSError: If a file cannot be read
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if labels.size and int(labels.max()) > MAX_LABEL:
        raise IDXFormatError(
            f"{labels_path}: label {int(labels.max())} out of range 0..{MAX_LABEL}"
        )
    if images.shape[0] != labels.shape[0]:
        raise IDXFormatError(
            f"Count mismatch: {images.shape[0]} images but {labels.shape[0]} labels"
        )
    inputs = images.astype(np.float64)[:, None, :, :] / 255.0
    logger.info(f"Loaded {images.shape[0]} samples of {images.shape[1:]} from {images_path}")
    return Dataset(inputs, labels.astype(np.int64))


def _find(directory: Path, stem: str) -> Path:
    dotted = stem.replace("-idx", ".idx")
    for name in (stem, stem + ".gz", dotted, dotted + ".gz"):
        if (directory / name).is_file():
            return directory / name
    raise FileNotFoundError(f"No '{stem}' file in {directory}")


def load_mnist_dir(directory: PathLike, split: str = "train") -> Dataset:
    """Load the train or test split from a directory of MNIST IDX files."""
    if split not in MNIST_FILES:
        raise ValueError(f"Unknown split '{split}'")
    directory = Path(directory)
    images_name, labels_name = MNIST_FILES[split]
    return load_idx(_find(directory, images_name), _find(directory, labels_name))


def write_idx_images(path: PathLike, images: np.ndarray) -> None:
    """Write (N, rows, cols) or (N, 1, rows, cols) images; floats are taken as [0, 1]."""
    arr = np.asarray(images)
    if arr.ndim == 4 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 3:
        raise IDXFormatError(f"Images must be (N, rows, cols), got {arr.shape}")
    if arr.dtype != np.uint8:
        arr = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = struct.pack(">4I", IMAGES_MAGIC, *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def write_idx_labels(path: PathLike, labels: np.ndarray) -> None:
    arr = np.asarray(labels).astype(np.uint8).reshape(-1)
    header = struct.pack(">2I", LABELS_MAGIC, arr.shape[0])
    Path(path).write_bytes(header + arr.tobytes())
