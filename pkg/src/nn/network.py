"""Network representation and the recording forward pass."""

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.nn.layers import (
    LayerKind,
    LayerSpec,
    NetworkError,
    Shape,
    layer_forward,
    softmax_rows,
)

PREDICT_CHUNK = 256


@dataclass(frozen=True, eq=False)
class Network:
    """An immutable feed-forward classifier under test."""

    layers: Tuple[LayerSpec, ...]
    params: Mapping[str, np.ndarray]
    input_shape: Shape
    num_classes: int
    model_id: str = "model"
    layer_shapes: Tuple[Shape, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(
            self, "input_shape", tuple(int(d) for d in self.input_shape)
        )
        object.__setattr__(self, "num_classes", int(self.num_classes))

        frozen: Dict[str, np.ndarray] = {}
        for name, value in self.params.items():
            arr = np.array(value, dtype=np.float64, copy=True)
            arr.setflags(write=False)
            frozen[name] = arr
        object.__setattr__(self, "params", MappingProxyType(frozen))
        object.__setattr__(self, "layer_shapes", self._validate())

    def _validate(self) -> Tuple[Shape, ...]:
        if not self.layers:
            raise NetworkError("Network has no layers")
        if self.num_classes < 1:
            raise NetworkError(f"Invalid class count: {self.num_classes}")

        shapes: List[Shape] = []
        shape = self.input_shape
        last = len(self.layers) - 1
        for index, spec in enumerate(self.layers):
            if spec.kind == LayerKind.SOFTMAX and index != last:
                raise NetworkError(f"Softmax at layer {index} is not the final layer")
            try:
                shape = spec.output_shape(shape)
            except NetworkError as e:
                raise NetworkError(f"Layer {index}: {e}") from e
            for name, expected in spec.param_shapes().items():
                if name not in self.params:
                    raise NetworkError(f"Layer {index}: missing parameter '{name}'")
                actual = self.params[name].shape
                if actual != expected:
                    raise NetworkError(
                        f"Layer {index}: parameter '{name}' has shape {actual}, "
                        f"expected {expected}"
                    )
            shapes.append(shape)

        if shape != (self.num_classes,):
            raise NetworkError(
                f"Final output shape {shape} does not match {self.num_classes} classes"
            )
        for name, arr in self.params.items():
            if not np.all(np.isfinite(arr)):
                raise NetworkError(f"Parameter '{name}' contains non-finite values")
        return tuple(shapes)

    @property
    def has_softmax(self) -> bool:
        return self.layers[-1].kind == LayerKind.SOFTMAX

    @property
    def logits_index(self) -> int:
        """Index of the layer whose output feeds the final softmax (-1 = input)."""
        return len(self.layers) - 2 if self.has_softmax else len(self.layers) - 1

    def with_params(
        self, params: Mapping[str, np.ndarray], model_id: Optional[str] = None
    ) -> "Network":
        """Copy of this network with replaced parameter tensors."""
        return Network(
            self.layers,
            params,
            self.input_shape,
            self.num_classes,
            self.model_id if model_id is None else model_id,
        )

    def param_count(self) -> int:
        return int(sum(arr.size for arr in self.params.values()))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Network):
            return NotImplemented
        if (
            self.layers != other.layers
            or self.input_shape != other.input_shape
            or self.num_classes != other.num_classes
            or self.model_id != other.model_id
            or set(self.params) != set(other.params)
        ):
            return False
        return all(
            self.params[name].shape == other.params[name].shape
            and self.params[name].tobytes() == other.params[name].tobytes()
            for name in self.params
        )

    __hash__ = None  # type: ignore[assignment]

    def describe(self) -> Dict[str, Any]:
        return {
            "model_id": self.model_id,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "layers": [spec.to_dict() for spec in self.layers],
            "parameters": self.param_count(),
        }


@dataclass
class ActivationTrace:
    """Per-layer outputs recorded during one forward pass."""

    model_id: str
    per_layer: List[np.ndarray]
    final_probs: np.ndarray
    logits: np.ndarray

    @property
    def predicted_class(self) -> int:
        return int(np.argmax(self.final_probs))


def validate_input(net: Network, x: Any) -> np.ndarray:
    """
    Coerce an input to float64 and check it against the network.

    Raises:
        NetworkError: If the shape does not match or values are not finite
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape != net.input_shape:
        raise NetworkError(
            f"Rejected input: shape {arr.shape} does not match {net.input_shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise NetworkError("Rejected input: non-finite values")
    return arr


def run_layers(net: Network, batch: np.ndarray) -> Tuple[List[np.ndarray], List[Any]]:
    """Batched forward pass keeping every layer output and backward cache."""
    outputs: List[np.ndarray] = []
    caches: List[Any] = []
    h = batch
    for spec in net.layers:
        h, cache = layer_forward(spec, net.params, h)
        outputs.append(h)
        caches.append(cache)
    return outputs, caches


def trace_from_outputs(
    net: Network, x: np.ndarray, outputs: Sequence[np.ndarray]
) -> ActivationTrace:
    """Build the single-input trace from batch-of-one layer outputs."""
    per_layer = [out[0] for out in outputs]
    logits = x if net.logits_index < 0 else per_layer[net.logits_index]
    probs = per_layer[-1] if net.has_softmax else softmax_rows(per_layer[-1])
    return ActivationTrace(net.model_id, per_layer, probs, logits)


def forward(net: Network, x: Any) -> ActivationTrace:
    """
    Run one input through the network, recording every layer's output.

    Args:
        net: Network under test
        x: Input with shape ``net.input_shape``

    Returns:
        Activation trace of the input

    Raises:
        NetworkError: If the input is rejected
    """
    arr = validate_input(net, x)
    outputs, _ = run_layers(net, arr[None, ...])
    return trace_from_outputs(net, arr, outputs)


def predict(net: Network, x: Any) -> Tuple[int, np.ndarray]:
    """Predicted class (ties go to the lowest index) and probability vector."""
    trace = forward(net, x)
    return trace.predicted_class, trace.final_probs


def predict_proba_batch(net: Network, inputs: np.ndarray) -> np.ndarray:
    """Class probabilities for a batch of inputs, computed in chunks."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.shape[1:] != net.input_shape:
        raise NetworkError(
            f"Rejected batch: input shape {inputs.shape[1:]} does not match "
            f"{net.input_shape}"
        )
    chunks = []
    for start in range(0, inputs.shape[0], PREDICT_CHUNK):
        outputs, _ = run_layers(net, inputs[start:start + PREDICT_CHUNK])
        last = outputs[-1]
        chunks.append(last if net.has_softmax else softmax_rows(last))
    if not chunks:
        return np.zeros((0, net.num_classes))
    return np.concatenate(chunks, axis=0)


def predict_batch(net: Network, inputs: np.ndarray) -> np.ndarray:
    """Predicted classes for a batch of inputs."""
    return np.argmax(predict_proba_batch(net, inputs), axis=1)


def accuracy(net: Network, inputs: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of inputs classified as their label."""
    if len(labels) == 0:
        return 0.0
    return float(np.mean(predict_batch(net, inputs) == np.asarray(labels)))
