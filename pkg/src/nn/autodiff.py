"""Reverse-mode differentiation over the layer kernels.

Two directions are supported: the gradient of a scalar selected from one
forward pass with respect to the input (parameters held constant), and the
gradient of the mean cross-entropy of a batch with respect to every named
parameter (inputs held constant).
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.nn.dataset import Dataset
from src.nn.layers import LayerKind, NetworkError, layer_backward, softmax_rows
from src.nn.network import (
    ActivationTrace,
    Network,
    predict_proba_batch,
    run_layers,
    trace_from_outputs,
    validate_input,
)
from src.nn.neurons import NeuronId, activation_index, check_neuron
from src.utils.logger import get_logger

logger = get_logger(__name__)


class AutodiffError(ValueError):
    """Raised for invalid selectors and empty or mislabelled batches."""
    pass


@dataclass(frozen=True)
class ClassProb:
    """Post-softmax probability of one class."""

    class_index: int


@dataclass(frozen=True)
class ClassLogit:
    """Pre-softmax score of one class."""

    class_index: int


@dataclass(frozen=True)
class NeuronOutput:
    """Raw value of one coverable neuron."""

    neuron: NeuronId


@dataclass(frozen=True)
class WeightedSum:
    """Linear combination of other selectors."""

    terms: Tuple[Tuple["Selector", float], ...]


Selector = Union[ClassProb, ClassLogit, NeuronOutput, WeightedSum]

# Seed gradients keyed by layer index; -1 addresses the input itself.
Seeds = Dict[int, np.ndarray]


def _add_seed(seeds: Seeds, index: int, grad: np.ndarray) -> None:
    if index in seeds:
        seeds[index] = seeds[index] + grad
    else:
        seeds[index] = grad


def _backpropagate(
    net: Network,
    caches: Sequence[Any],
    seeds: Seeds,
    input_shape: Tuple[int, ...],
    want_params: bool = False,
) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Walk seeded gradients from the highest seeded layer down to the input."""
    param_grads: Dict[str, np.ndarray] = {}
    grad: Optional[np.ndarray] = None
    top = max(seeds) if seeds else -1
    for index in range(top, -1, -1):
        if index in seeds:
            grad = seeds[index] if grad is None else grad + seeds[index]
        if grad is None:
            continue
        grad, layer_grads = layer_backward(
            net.layers[index], net.params, caches[index], grad, want_params
        )
        param_grads.update(layer_grads)
    if -1 in seeds:
        grad = seeds[-1] if grad is None else grad + seeds[-1]
    if grad is None:
        grad = np.zeros(input_shape)
    return grad, param_grads


class Tape:
    """
    One recorded forward pass of a single input, ready for any number of
    backward passes against different selectors.
    """

    def __init__(self, net: Network, x: Any):
        """
        Args:
            net: Network to differentiate
            x: Input with shape ``net.input_shape``

        Raises:
            NetworkError: If the input is rejected
        """
        self.net = net
        self.x = validate_input(net, x)
        self._outputs, self._caches = run_layers(net, self.x[None, ...])
        self.trace: ActivationTrace = trace_from_outputs(net, self.x, self._outputs)

    @property
    def per_layer(self) -> List[np.ndarray]:
        return self.trace.per_layer

    def _check_class(self, class_index: int) -> None:
        if not 0 <= class_index < self.net.num_classes:
            raise AutodiffError(
                f"Class {class_index} does not exist in '{self.net.model_id}' "
                f"({self.net.num_classes} classes)"
            )

    def _collect(self, sel: Selector, coeff: float, seeds: Seeds) -> float:
        """Value of ``sel``; adds ``coeff`` times its output-side gradient to seeds."""
        net = self.net
        if isinstance(sel, WeightedSum):
            total = 0.0
            for inner, weight in sel.terms:
                if not np.isfinite(weight):
                    raise AutodiffError(f"Non-finite selector coefficient: {weight}")
                total += weight * self._collect(inner, coeff * weight, seeds)
            return total

        if isinstance(sel, ClassLogit):
            self._check_class(sel.class_index)
            logits = self.trace.logits
            seed = np.zeros_like(logits)
            seed[sel.class_index] = coeff
            _add_seed(seeds, net.logits_index, seed)
            return float(logits[sel.class_index])

        if isinstance(sel, ClassProb):
            self._check_class(sel.class_index)
            probs = softmax_rows(self.trace.logits)
            c = sel.class_index
            onehot = np.zeros_like(probs)
            onehot[c] = 1.0
            # d p_c / d z = p_c (e_c - p)
            _add_seed(seeds, net.logits_index, coeff * probs[c] * (onehot - probs))
            return float(self.trace.final_probs[c])

        if isinstance(sel, NeuronOutput):
            try:
                check_neuron(net, sel.neuron)
            except NetworkError as e:
                raise AutodiffError(str(e)) from e
            layer = sel.neuron.layer_index
            unit = sel.neuron.unit_index
            act = activation_index(net, layer)
            out = self.per_layer[act]
            seed = np.zeros_like(out)
            if net.layers[layer].kind == LayerKind.CONV2D:
                channel = out[unit]
                seed[unit] = coeff / channel.size
                value = float(channel.mean())
            else:
                seed[unit] = coeff
                value = float(out[unit])
            _add_seed(seeds, act, seed)
            return value

        raise AutodiffError(f"Unknown selector: {sel!r}")

    def value(self, sel: Selector) -> float:
        return self._collect(sel, 1.0, {})

    def value_and_gradient(self, sel: Selector) -> Tuple[float, np.ndarray]:
        """
        Evaluate a selector and its gradient with respect to the input.

        Returns:
            Tuple of (value, gradient with the input's shape)

        Raises:
            AutodiffError: If the selector references a missing class or neuron
        """
        seeds: Seeds = {}
        value = self._collect(sel, 1.0, seeds)
        batched = {index: grad[None, ...] for index, grad in seeds.items()}
        grad, _ = _backpropagate(
            self.net, self._caches, batched, (1,) + self.net.input_shape
        )
        return value, grad[0]

    def gradient(self, sel: Selector) -> np.ndarray:
        return self.value_and_gradient(sel)[1]


def input_gradient(net: Network, sel: Selector, x: Any) -> np.ndarray:
    """Gradient of a selected scalar with respect to the input."""
    return Tape(net, x).gradient(sel)


def evaluate(net: Network, sel: Selector, x: Any) -> float:
    return Tape(net, x).value(sel)


def _check_batch(net: Network, inputs: np.ndarray, labels: np.ndarray) -> None:
    if labels.shape[0] == 0:
        raise AutodiffError("Empty batch")
    if inputs.shape[0] != labels.shape[0]:
        raise AutodiffError(
            f"Batch has {inputs.shape[0]} inputs but {labels.shape[0]} labels"
        )
    if inputs.shape[1:] != net.input_shape:
        raise AutodiffError(
            f"Batch input shape {inputs.shape[1:]} does not match {net.input_shape}"
        )
    if labels.min() < 0 or labels.max() >= net.num_classes:
        raise AutodiffError(
            f"Label out of range for {net.num_classes} classes: "
            f"[{labels.min()}, {labels.max()}]"
        )


def loss_and_param_gradients(
    net: Network, inputs: np.ndarray, labels: Sequence[int]
) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Mean softmax cross-entropy of a batch and its parameter gradients.

    Args:
        net: Network being trained
        inputs: Batch of inputs (B x input_shape)
        labels: B class indices

    Returns:
        Tuple of (mean loss, gradient per parameter name)

    Raises:
        AutodiffError: If the batch is empty or a label is out of range
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    label_arr = np.asarray(labels, dtype=np.int64).reshape(-1)
    _check_batch(net, inputs, label_arr)

    batch_size = label_arr.shape[0]
    outputs, caches = run_layers(net, inputs)
    index = net.logits_index
    logits = inputs if index < 0 else outputs[index]
    logits = logits.reshape(batch_size, -1)

    rows = np.arange(batch_size)
    shift = np.max(logits, axis=1, keepdims=True)
    log_norm = shift[:, 0] + np.log(np.sum(np.exp(logits - shift), axis=1))
    loss = float(np.mean(log_norm - logits[rows, label_arr]))

    seed = softmax_rows(logits)
    seed[rows, label_arr] -= 1.0
    seed /= batch_size

    _, grads = _backpropagate(
        net, caches, {index: seed}, inputs.shape, want_params=True
    )
    for name, param in net.params.items():
        if name not in grads:
            grads[name] = np.zeros_like(param)
    return loss, grads


def param_gradients(net: Network, batch: Dataset) -> Dict[str, np.ndarray]:
    """Mean cross-entropy gradient per named parameter over a batch."""
    _, grads = loss_and_param_gradients(net, batch.inputs, batch.labels)
    return grads


def cross_entropy(net: Network, batch: Dataset) -> float:
    """Mean cross-entropy of a dataset, without gradients."""
    if len(batch) == 0:
        raise AutodiffError("Empty batch")
    probs = predict_proba_batch(net, batch.inputs)
    picked = probs[np.arange(len(batch)), batch.labels]
    return float(-np.mean(np.log(np.clip(picked, 1e-300, None))))
