"""Neuron coverage: which neurons some test input has pushed above threshold."""

import threading
from dataclasses import dataclass
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Sequence, Set

import numpy as np

from src.nn.layers import LayerKind
from src.nn.network import ActivationTrace, Network, forward, run_layers
from src.nn.neurons import (
    NeuronId,
    activation_index,
    all_neurons,
    coverable_layers,
    neuron_value_map,
)
from src.utils.logger import get_logger

logger = get_logger(__name__)

BATCH_CHUNK = 256


class CoverageError(Exception):
    """Raised for tracker misuse (model mismatch, empty network)."""
    pass


class AllCoveredError(CoverageError):
    """Raised by neuron selection when every neuron is already activated."""
    pass


def neuron_outputs(
    net: Network,
    trace: ActivationTrace,
    scale: bool = False,
    include_dense: bool = True,
) -> Dict[NeuronId, float]:
    """
    Value of every coverable neuron for one trace.

    Dense units map one-to-one; a Conv2D channel is the mean over its spatial
    positions. With ``scale`` each layer is min-max scaled to [0, 1] for this
    input, and a constant layer scales to 0.
    """
    return neuron_value_map(net, trace.per_layer, scale, include_dense)


def _batch_values(
    net: Network, outputs: Sequence[np.ndarray], layer: int, scale: bool
) -> np.ndarray:
    out = outputs[activation_index(net, layer)]
    if net.layers[layer].kind == LayerKind.CONV2D:
        values = out.mean(axis=(2, 3))
    else:
        values = out
    if scale:
        lo = values.min(axis=1, keepdims=True)
        span = values.max(axis=1, keepdims=True) - lo
        safe = np.where(span == 0.0, 1.0, span)
        values = np.where(span == 0.0, 0.0, (values - lo) / safe)
    return values


def activated_by_batch(
    net: Network,
    inputs: np.ndarray,
    threshold: float,
    scale: bool = False,
    include_dense: bool = True,
) -> Set[NeuronId]:
    """Neurons activated by at least one input of a batch."""
    activated: Set[NeuronId] = set()
    inputs = np.asarray(inputs, dtype=np.float64)
    for start in range(0, inputs.shape[0], BATCH_CHUNK):
        outputs, _ = run_layers(net, inputs[start:start + BATCH_CHUNK])
        for layer in coverable_layers(net, include_dense):
            hit = np.any(_batch_values(net, outputs, layer, scale) > threshold, axis=0)
            activated.update(NeuronId(layer, int(u)) for u in np.flatnonzero(hit))
    return activated


class CoverageTracker:
    """
    Activated-neuron set of one model.

    The tracker is the only shared mutable object during parallel generation;
    every read and write of the activated set holds its lock.
    """

    def __init__(
        self,
        model_id: str,
        neurons: Iterable[NeuronId],
        threshold: float = 0.0,
        scale_outputs: bool = False,
        include_dense: bool = True,
    ):
        self.model_id = model_id
        self.threshold = float(threshold)
        self.scale_outputs = scale_outputs
        self.include_dense = include_dense
        self._neurons: List[NeuronId] = sorted(neurons)
        self._known: FrozenSet[NeuronId] = frozenset(self._neurons)
        self._activated: Set[NeuronId] = set()
        self._lock = threading.Lock()

    @classmethod
    def for_network(
        cls,
        net: Network,
        threshold: float = 0.0,
        scale_outputs: bool = False,
        include_dense: bool = True,
    ) -> "CoverageTracker":
        return cls(
            net.model_id,
            all_neurons(net, include_dense),
            threshold,
            scale_outputs,
            include_dense,
        )

    @property
    def total(self) -> int:
        return len(self._neurons)

    @property
    def activated(self) -> FrozenSet[NeuronId]:
        with self._lock:
            return frozenset(self._activated)

    @property
    def activated_count(self) -> int:
        with self._lock:
            return len(self._activated)

    def _check_model(self, net: Network) -> None:
        if net.model_id != self.model_id:
            raise CoverageError(
                f"Model mismatch: tracker for '{self.model_id}', got '{net.model_id}'"
            )

    def update(self, net: Network, trace: ActivationTrace) -> int:
        """
        Add every neuron whose output exceeds the threshold.

        Returns:
            Number of newly activated neurons

        Raises:
            CoverageError: If the trace or network belongs to another model
        """
        self._check_model(net)
        if trace.model_id != self.model_id:
            raise CoverageError(
                f"Model mismatch: tracker for '{self.model_id}', "
                f"trace from '{trace.model_id}'"
            )
        values = neuron_outputs(net, trace, self.scale_outputs, self.include_dense)
        hits = [n for n, v in values.items() if v > self.threshold]
        with self._lock:
            before = len(self._activated)
            self._activated.update(hits)
            return len(self._activated) - before

    def update_batch(self, net: Network, inputs: np.ndarray) -> int:
        """Batched equivalent of calling :meth:`update` on every input."""
        self._check_model(net)
        hits = activated_by_batch(
            net, inputs, self.threshold, self.scale_outputs, self.include_dense
        )
        with self._lock:
            before = len(self._activated)
            self._activated.update(hits)
            return len(self._activated) - before

    def ncov(self) -> float:
        """
        Fraction of neurons activated so far.

        Raises:
            CoverageError: If the network has no coverable neurons
        """
        if self.total == 0:
            raise CoverageError(f"Model '{self.model_id}' has no coverable neurons")
        with self._lock:
            return len(self._activated) / self.total

    def is_active(self, neuron: NeuronId) -> bool:
        with self._lock:
            return neuron in self._activated

    def inactive(self) -> List[NeuronId]:
        with self._lock:
            return [n for n in self._neurons if n not in self._activated]

    def select_inactive(self, rng: np.random.Generator) -> NeuronId:
        """
        Uniformly random neuron not activated so far.

        Raises:
            AllCoveredError: If every neuron is activated
        """
        candidates = self.inactive()
        if not candidates:
            raise AllCoveredError(f"All neurons of '{self.model_id}' are covered")
        return candidates[int(rng.integers(len(candidates)))]

    def select_any(self, rng: np.random.Generator) -> NeuronId:
        """Uniformly random neuron, activated or not."""
        if not self._neurons:
            raise CoverageError(f"Model '{self.model_id}' has no coverable neurons")
        return self._neurons[int(rng.integers(len(self._neurons)))]

    def report_line(self) -> str:
        """One line of the coverage report."""
        return (
            f"{self.model_id} t={self.threshold:g} activated={self.activated_count} "
            f"total={self.total} ncov={self.ncov():.4f}"
        )

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            "model_id": self.model_id,
            "threshold": self.threshold,
            "activated": self.activated_count,
            "total": self.total,
            "ncov": self.ncov() if self.total else 0.0,
        }


@dataclass
class OverlapResult:
    """Activated-neuron counts of two inputs and of their intersection."""

    activated_a: int
    activated_b: int
    common: int


def overlap(
    net: Network,
    input_a: Any,
    input_b: Any,
    threshold: float = 0.0,
    scale: bool = False,
    include_dense: bool = True,
) -> OverlapResult:
    """Compare the neurons two inputs activate on the same network."""
    sets = []
    for x in (input_a, input_b):
        values = neuron_outputs(net, forward(net, x), scale, include_dense)
        sets.append({n for n, v in values.items() if v > threshold})
    return OverlapResult(len(sets[0]), len(sets[1]), len(sets[0] & sets[1]))


def recompute_coverage(
    net: Network,
    inputs: Iterable[Any],
    threshold: float = 0.0,
    scale: bool = False,
    include_dense: bool = True,
) -> FrozenSet[NeuronId]:
    """Activated set rebuilt from scratch, one forward pass per input."""
    activated: Set[NeuronId] = set()
    for x in inputs:
        values = neuron_outputs(net, forward(net, x), scale, include_dense)
        activated.update(n for n, v in values.items() if v > threshold)
    return frozenset(activated)


def coverage_ratio(
    net: Network,
    inputs: np.ndarray,
    threshold: float = 0.0,
    scale: bool = False,
    include_dense: bool = True,
    tracker: Optional[CoverageTracker] = None,
) -> float:
    """Coverage reached by a batch of inputs on a fresh (or given) tracker."""
    if tracker is None:
        tracker = CoverageTracker.for_network(net, threshold, scale, include_dense)
    tracker.update_batch(net, inputs)
    return tracker.ncov()
