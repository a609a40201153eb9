"""Architecture text format, LeNet presets and network construction."""

import re
from dataclasses import dataclass, replace
from typing import List, Sequence

import numpy as np

from src.nn.layers import LayerKind, LayerSpec, NetworkError, Shape
from src.nn.network import Network
from src.utils.logger import get_logger

logger = get_logger(__name__)

PRESETS = {
    "lenet1": "conv:4:5x5, relu, pool:2, conv:12:5x5, relu, pool:2, flatten, "
    "dense:10, softmax",
    "lenet4": "conv:4:5x5, relu, pool:2, conv:16:5x5, relu, pool:2, flatten, "
    "dense:120, relu, dense:10, softmax",
    "lenet5": "conv:6:5x5, relu, pool:2, conv:16:5x5, relu, pool:2, flatten, "
    "dense:120, relu, dense:84, relu, dense:10, softmax",
}

_CONV = re.compile(r"^conv:(\d+):(\d+)x(\d+)(?::(\d+))?$")
_POOL = re.compile(r"^pool:(\d+)(?::(\d+))?$")
_DENSE = re.compile(r"^dense:(\d+)$")


@dataclass(frozen=True)
class LayerTemplate:
    """A layer before input sizes are known."""

    kind: LayerKind
    size: int = 0
    kernel_h: int = 0
    kernel_w: int = 0
    stride: int = 1

    def to_text(self) -> str:
        if self.kind == LayerKind.CONV2D:
            text = f"conv:{self.size}:{self.kernel_h}x{self.kernel_w}"
            return text if self.stride == 1 else f"{text}:{self.stride}"
        if self.kind == LayerKind.MAXPOOL2D:
            text = f"pool:{self.size}"
            return text if self.stride == self.size else f"{text}:{self.stride}"
        if self.kind == LayerKind.DENSE:
            return f"dense:{self.size}"
        return self.kind.value.lower()


def _positive(value: str, token: str) -> int:
    number = int(value)
    if number < 1:
        raise NetworkError(f"Layer '{token}' needs a positive size")
    return number


def parse_architecture(text: str) -> List[LayerTemplate]:
    """
    Parse a comma-separated layer list or a preset name.

    Args:
        text: e.g. ``"conv:4:5x5, relu, pool:2, flatten, dense:10, softmax"``
            or ``"lenet5"``

    Returns:
        Layer templates in order

    Raises:
        NetworkError: On an unknown or malformed token
    """
    text = text.strip()
    text = PRESETS.get(text.lower(), text)
    templates: List[LayerTemplate] = []
    for raw in text.split(","):
        token = raw.strip().lower()
        if not token:
            continue
        match = _CONV.match(token)
        if match:
            out, kh, kw, stride = match.groups()
            templates.append(
                LayerTemplate(
                    LayerKind.CONV2D,
                    _positive(out, token),
                    _positive(kh, token),
                    _positive(kw, token),
                    _positive(stride or "1", token),
                )
            )
            continue
        match = _POOL.match(token)
        if match:
            window, stride = match.groups()
            size = _positive(window, token)
            templates.append(
                LayerTemplate(
                    LayerKind.MAXPOOL2D, size, stride=_positive(stride or window, token)
                )
            )
            continue
        match = _DENSE.match(token)
        if match:
            templates.append(LayerTemplate(LayerKind.DENSE, _positive(match.group(1), token)))
            continue
        simple = {
            "relu": LayerKind.RELU,
            "flatten": LayerKind.FLATTEN,
            "softmax": LayerKind.SOFTMAX,
        }
        if token in simple:
            templates.append(LayerTemplate(simple[token]))
            continue
        raise NetworkError(f"Unknown layer token: '{raw.strip()}'")

    if not templates:
        raise NetworkError("Architecture is empty")
    return templates


def format_architecture(templates: Sequence[LayerTemplate]) -> str:
    return ", ".join(t.to_text() for t in templates)


def _last_dense(templates: Sequence[LayerTemplate]) -> int:
    for index in range(len(templates) - 1, -1, -1):
        if templates[index].kind == LayerKind.DENSE:
            return index
    return -1


def build_network(
    templates: Sequence[LayerTemplate],
    input_shape: Shape,
    num_classes: int,
    rng: np.random.Generator,
    model_id: str = "model",
) -> Network:
    """
    Instantiate templates with Xavier-uniform weights and zero biases.

    The final Dense layer is sized to ``num_classes``.

    Raises:
        NetworkError: If the layers do not fit the input shape
    """
    last_dense = _last_dense(templates)
    specs: List[LayerSpec] = []
    params = {}
    shape = tuple(input_shape)
    for index, template in enumerate(templates):
        name = f"l{index}"
        if template.kind == LayerKind.CONV2D:
            if len(shape) != 3:
                raise NetworkError(f"Layer {index}: conv needs (C, H, W) input, got {shape}")
            spec = LayerSpec.conv2d(
                shape[0],
                template.size,
                template.kernel_h,
                template.kernel_w,
                name,
                template.stride,
            )
            area = template.kernel_h * template.kernel_w
            fan_in, fan_out = shape[0] * area, template.size * area
        elif template.kind == LayerKind.DENSE:
            if len(shape) != 1:
                raise NetworkError(f"Layer {index}: dense needs a vector input, got {shape}")
            units = num_classes if index == last_dense else template.size
            spec = LayerSpec.dense(shape[0], units, name)
            fan_in, fan_out = shape[0], units
        elif template.kind == LayerKind.MAXPOOL2D:
            spec = LayerSpec.maxpool2d(template.size, template.stride)
        elif template.kind == LayerKind.RELU:
            spec = LayerSpec.relu()
        elif template.kind == LayerKind.FLATTEN:
            spec = LayerSpec.flatten()
        else:
            spec = LayerSpec.softmax()

        try:
            shape = spec.output_shape(shape)
        except NetworkError as e:
            raise NetworkError(f"Layer {index}: {e}") from e

        if spec.is_parametric:
            w_name, b_name = spec.param_names
            w_shape = spec.param_shapes()[w_name]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            params[w_name] = rng.uniform(-limit, limit, size=w_shape)
            params[b_name] = np.zeros(spec.param_shapes()[b_name])
        specs.append(spec)

    net = Network(tuple(specs), params, tuple(input_shape), num_classes, model_id)
    logger.debug(f"Built '{model_id}' with {net.param_count()} parameters")
    return net


def shrink_templates(templates: Sequence[LayerTemplate], units: int) -> List[LayerTemplate]:
    """
    Remove ``units`` filters or hidden units from every hidden parametric layer.

    Raises:
        NetworkError: If a layer would be left with fewer than one unit
    """
    if units < 0:
        raise NetworkError(f"Cannot remove a negative number of units: {units}")
    last_dense = _last_dense(templates)
    shrunk: List[LayerTemplate] = []
    for index, template in enumerate(templates):
        hidden = template.kind == LayerKind.CONV2D or (
            template.kind == LayerKind.DENSE and index != last_dense
        )
        if hidden and units:
            if template.size - units < 1:
                raise NetworkError(
                    f"Layer {index} has {template.size} units; cannot remove {units}"
                )
            template = replace(template, size=template.size - units)
        shrunk.append(template)
    return shrunk
