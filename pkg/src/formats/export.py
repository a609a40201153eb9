"""Report files: PGM images, text vectors and the generation output directory.

Layout written by :func:`write_generation_output`::

    records/0000.pgm     one file per record (.vec for non-image inputs)
    manifest.jsonl       one JSON object per record
    stats.json           aggregate counters
    coverage.txt         one coverage line per model
"""

import json
import re
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, Iterable, List, Sequence, Union

import numpy as np

from src.utils.logger import get_logger

if TYPE_CHECKING:
    from src.core.coverage import CoverageTracker
    from src.core.generator import DifferenceRecord

logger = get_logger(__name__)

PathLike = Union[str, Path]

RECORDS_DIR = "records"
MANIFEST_FILE = "manifest.jsonl"
STATS_FILE = "stats.json"
COVERAGE_FILE = "coverage.txt"


class ExportError(ValueError):
    """Raised for unreadable report files."""
    pass


def is_image(shape: Sequence[int]) -> bool:
    """Inputs exported as PGM: (H, W) or single-channel (1, H, W)."""
    return len(shape) == 2 or (len(shape) == 3 and shape[0] == 1)


def write_pgm(path: PathLike, image: np.ndarray) -> None:
    """Write a [0, 1] image as binary PGM (P5, maxval 255)."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise ExportError(f"PGM needs a 2-D image, got shape {arr.shape}")
    pixels = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    height, width = pixels.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())


_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def read_pgm(path: PathLike) -> np.ndarray:
    """Read a binary PGM into an (H, W) array scaled to [0, 1]."""
    data = Path(path).read_bytes()
    tokens: List[bytes] = []
    position = 0
    while len(tokens) < 4:
        match = _PGM_TOKEN.match(data, position)
        if not match:
            raise ExportError(f"{path}: truncated PGM header")
        tokens.append(match.group(1))
        position = match.end()
    magic, width, height, maxval = tokens
    if magic != b"P5":
        raise ExportError(f"{path}: not a binary PGM")
    w, h, top = int(width), int(height), int(maxval)
    if top != 255:
        raise ExportError(f"{path}: unsupported maxval {top}")
    pixels = data[position + 1:position + 1 + w * h]
    if len(pixels) != w * h:
        raise ExportError(f"{path}: truncated PGM payload")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w) / 255.0


def write_vec(path: PathLike, values: np.ndarray) -> None:
    """Write a flat vector of floats, one per line."""
    flat = np.asarray(values, dtype=np.float64).ravel()
    Path(path).write_text("".join(f"{v!r}\n" for v in flat.tolist()))


def read_vec(path: PathLike) -> np.ndarray:
    """Read a text vector written by :func:`write_vec` (or any whitespace floats)."""
    text = Path(path).read_text()
    try:
        return np.array([float(tok) for tok in text.split()], dtype=np.float64)
    except ValueError as e:
        raise ExportError(f"{path}: not a float vector ({e})") from e


def record_filename(index: int, shape: Sequence[int]) -> str:
    return f"{index:04d}.{'pgm' if is_image(shape) else 'vec'}"


def write_generation_output(
    out_dir: PathLike,
    records: Sequence["DifferenceRecord"],
    trackers: Iterable["CoverageTracker"],
    stats: Dict[str, Any],
) -> Path:
    """
    Write records, manifest, stats and coverage report to a directory.

    Returns:
        The output directory
    """
    out = Path(out_dir)
    records_dir = out / RECORDS_DIR
    records_dir.mkdir(parents=True, exist_ok=True)

    lines = []
    for index, record in enumerate(records):
        name = record_filename(index, record.input.shape)
        if name.endswith(".pgm"):
            write_pgm(records_dir / name, record.input)
        else:
            write_vec(records_dir / name, record.input)
        entry = {"file": f"{RECORDS_DIR}/{name}", **record.to_dict()}
        lines.append(json.dumps(entry, sort_keys=True))
    (out / MANIFEST_FILE).write_text("".join(line + "\n" for line in lines))

    (out / STATS_FILE).write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    report = [tracker.report_line() for tracker in trackers]
    (out / COVERAGE_FILE).write_text("".join(line + "\n" for line in report))
    logger.info(f"Wrote {len(records)} records to {out}")
    return out


def read_manifest(out_dir: PathLike) -> List[Dict[str, Any]]:
    """
    Raises:
        FileNotFoundError: If the manifest does not exist
        ExportError: If a line is not valid JSON
    """
    path = Path(out_dir) / MANIFEST_FILE
    entries = []
    for number, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            entries.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise ExportError(f"{path}:{number}: invalid JSON ({e})") from e
    return entries


def read_stats(out_dir: PathLike) -> Dict[str, Any]:
    path = Path(out_dir) / STATS_FILE
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ExportError(f"{path}: invalid JSON ({e})") from e


def read_coverage_report(out_dir: PathLike) -> List[Dict[str, Any]]:
    """Parse ``coverage.txt`` lines back into fields."""
    path = Path(out_dir) / COVERAGE_FILE
    rows = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        model_id, _, rest = line.rpartition(" t=")
        fields = dict(item.split("=", 1) for item in ("t=" + rest).split())
        rows.append(
            {
                "model_id": model_id,
                "threshold": float(fields["t"]),
                "activated": int(fields["activated"]),
                "total": int(fields["total"]),
                "ncov": float(fields["ncov"]),
            }
        )
    return rows


def load_record_input(out_dir: PathLike, entry: Dict[str, Any], shape: Sequence[int]) -> np.ndarray:
    """Read a record's input back in the model's input shape (PGM is 8-bit)."""
    path = Path(out_dir) / entry["file"]
    data = read_pgm(path) if path.suffix == ".pgm" else read_vec(path)
    return data.reshape(tuple(shape))


def write_json(path: PathLike, payload: Dict[str, Any]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
