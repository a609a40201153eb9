"""Model files: a text manifest followed by a raw little-endian float64 blob.

Manifest layout, one record per line::

    neurodiff-model 1
    model <model_id>
    input_shape 1,28,28
    num_classes 10
    layer Conv2D in_channels=1 ... params=l0.w,l0.b
    array l0.w offset=0 shape=4,1,5,5
    blob <size in bytes>
    checksum sha256 <hex digest of the blob>
    end
"""

import hashlib
import io
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from src.nn.layers import LayerKind, LayerSpec, NetworkError
from src.nn.network import Network
from src.utils.logger import get_logger

logger = get_logger(__name__)

FORMAT_NAME = "neurodiff-model"
FORMAT_VERSION = 1
BLOB_DTYPE = np.dtype("<f8")

PathLike = Union[str, Path]


class ModelFormatError(Exception):
    """Raised when a model file cannot be decoded."""
    pass


def _shape_text(shape: Tuple[int, ...]) -> str:
    return ",".join(str(d) for d in shape)


def _parse_shape(text: str) -> Tuple[int, ...]:
    return tuple(int(d) for d in text.split(",") if d)


def encode_model(net: Network) -> bytes:
    """Serialize a network to the model file byte layout."""
    lines = [
        f"{FORMAT_NAME} {FORMAT_VERSION}",
        f"model {net.model_id}",
        f"input_shape {_shape_text(net.input_shape)}",
        f"num_classes {net.num_classes}",
    ]
    for spec in net.layers:
        fields = [f"{k}={v}" for k, v in sorted(spec.hyperparams.items())]
        params = ",".join(spec.param_names) or "-"
        lines.append(" ".join(["layer", spec.kind.value, *fields, f"params={params}"]))

    blob = io.BytesIO()
    for name in sorted(net.params):
        arr = np.ascontiguousarray(net.params[name], dtype=BLOB_DTYPE)
        lines.append(f"array {name} offset={blob.tell()} shape={_shape_text(arr.shape)}")
        blob.write(arr.tobytes())
    payload = blob.getvalue()
    lines.append(f"blob {len(payload)}")
    lines.append(f"checksum sha256 {hashlib.sha256(payload).hexdigest()}")
    lines.append("end")
    return ("\n".join(lines) + "\n").encode("utf-8") + payload


def save_model(net: Network, path: PathLike) -> None:
    """Write a network to ``path``, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_model(net))
    logger.info(f"Saved model '{net.model_id}' to {path}")


def _parse_layer(parts: List[str]) -> LayerSpec:
    try:
        kind = LayerKind(parts[1])
    except (IndexError, ValueError) as e:
        raise ModelFormatError(f"Unknown layer record: {' '.join(parts)}") from e
    hyperparams: Dict[str, int] = {}
    param_names: Tuple[str, ...] = ()
    for field in parts[2:]:
        key, _, value = field.partition("=")
        if key == "params":
            param_names = () if value == "-" else tuple(value.split(","))
        else:
            hyperparams[key] = int(value)
    return LayerSpec(kind, hyperparams, param_names)


def decode_model(data: bytes) -> Network:
    """
    Rebuild a network from model file bytes.

    Raises:
        ModelFormatError: On version mismatch, checksum failure, a missing
            array or any other malformed record
    """
    stream = io.BytesIO(data)
    header = stream.readline().decode("utf-8", errors="replace").split()
    if len(header) != 2 or header[0] != FORMAT_NAME:
        raise ModelFormatError("Not a neurodiff model file")
    if header[1] != str(FORMAT_VERSION):
        raise ModelFormatError(
            f"Version mismatch: file has version {header[1]}, expected {FORMAT_VERSION}"
        )

    model_id = "model"
    input_shape: Tuple[int, ...] = ()
    num_classes = 0
    layers: List[LayerSpec] = []
    arrays: Dict[str, Tuple[int, Tuple[int, ...]]] = {}
    blob_size = -1
    checksum = ""
    while True:
        raw = stream.readline()
        if not raw:
            raise ModelFormatError("Manifest is not terminated by 'end'")
        line = raw.decode("utf-8", errors="replace").rstrip("\n")
        if line == "end":
            break
        key, _, rest = line.partition(" ")
        try:
            if key == "model":
                model_id = rest
            elif key == "input_shape":
                input_shape = _parse_shape(rest)
            elif key == "num_classes":
                num_classes = int(rest)
            elif key == "layer":
                layers.append(_parse_layer(line.split()))
            elif key == "array":
                name, offset, shape = rest.split()
                arrays[name] = (
                    int(offset.partition("=")[2]),
                    _parse_shape(shape.partition("=")[2]),
                )
            elif key == "blob":
                blob_size = int(rest)
            elif key == "checksum":
                algorithm, digest = rest.split()
                if algorithm != "sha256":
                    raise ModelFormatError(f"Unsupported checksum: {algorithm}")
                checksum = digest
            else:
                raise ModelFormatError(f"Unknown manifest record: '{key}'")
        except ValueError as e:
            raise ModelFormatError(f"Malformed manifest line: '{line}'") from e

    payload = stream.read()
    if blob_size != len(payload):
        raise ModelFormatError(
            f"Blob size mismatch: manifest says {blob_size}, found {len(payload)} bytes"
        )
    if hashlib.sha256(payload).hexdigest() != checksum:
        raise ModelFormatError("Checksum failure: blob does not match the manifest")

    params: Dict[str, np.ndarray] = {}
    for spec in layers:
        for name in spec.param_names:
            if name not in arrays:
                raise ModelFormatError(f"Missing array '{name}'")
    for name, (offset, shape) in arrays.items():
        count = int(np.prod(shape))
        end = offset + count * BLOB_DTYPE.itemsize
        if offset < 0 or end > len(payload):
            raise ModelFormatError(f"Array '{name}' lies outside the blob")
        params[name] = np.frombuffer(
            payload, dtype=BLOB_DTYPE, count=count, offset=offset
        ).reshape(shape)

    try:
        return Network(tuple(layers), params, input_shape, num_classes, model_id)
    except NetworkError as e:
        raise ModelFormatError(f"Invalid network: {e}") from e


def load_model(path: PathLike) -> Network:
    """
    Read a network written by :func:`save_model`.

    Raises:
        ModelFormatError: If the file is not a valid model
        OSError: If the file cannot be read
    """
    net = decode_model(Path(path).read_bytes())
    logger.info(f"Loaded model '{net.model_id}' from {path}")
    return net
