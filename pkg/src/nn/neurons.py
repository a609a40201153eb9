"""Neuron addressing shared by coverage tracking and objectives.

A neuron is one unit of a Dense layer or one output channel of a Conv2D
layer. Its value is read after the layer's ReLU when one follows directly,
and a channel's value is the mean over its spatial positions.
"""

from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from src.nn.layers import LayerKind, NetworkError
from src.nn.network import Network


@dataclass(frozen=True, order=True)
class NeuronId:
    """Address of a coverable neuron inside a network."""

    layer_index: int
    unit_index: int

    def __str__(self) -> str:
        return f"L{self.layer_index}:{self.unit_index}"


def coverable_layers(net: Network, include_dense: bool = True) -> List[int]:
    """Indices of the layers whose units count as neurons."""
    kinds = (LayerKind.CONV2D, LayerKind.DENSE) if include_dense else (LayerKind.CONV2D,)
    return [i for i, spec in enumerate(net.layers) if spec.kind in kinds]


def activation_index(net: Network, layer_index: int) -> int:
    """Layer whose output holds the neuron values of ``layer_index``."""
    following = layer_index + 1
    if following < len(net.layers) and net.layers[following].kind == LayerKind.RELU:
        return following
    return layer_index


def neuron_count(net: Network, layer_index: int) -> int:
    return int(net.layer_shapes[layer_index][0])


def all_neurons(net: Network, include_dense: bool = True) -> List[NeuronId]:
    """Every coverable neuron, in layer then unit order."""
    return [
        NeuronId(layer, unit)
        for layer in coverable_layers(net, include_dense)
        for unit in range(neuron_count(net, layer))
    ]


def check_neuron(net: Network, neuron: NeuronId) -> None:
    """
    Raises:
        NetworkError: If the neuron does not exist in the network
    """
    if not 0 <= neuron.layer_index < len(net.layers):
        raise NetworkError(f"Neuron {neuron}: no layer {neuron.layer_index}")
    if net.layers[neuron.layer_index].kind not in (LayerKind.DENSE, LayerKind.CONV2D):
        raise NetworkError(f"Neuron {neuron}: layer is not coverable")
    if not 0 <= neuron.unit_index < neuron_count(net, neuron.layer_index):
        raise NetworkError(f"Neuron {neuron}: unit index out of range")


def layer_neuron_values(
    net: Network, per_layer: Sequence[np.ndarray], layer_index: int
) -> np.ndarray:
    """Raw values of every neuron of one coverable layer."""
    out = per_layer[activation_index(net, layer_index)]
    if net.layers[layer_index].kind == LayerKind.CONV2D:
        return out.mean(axis=(1, 2))
    return out


def min_max_scale(values: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]; a constant layer scales to all zeros."""
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def neuron_value_map(
    net: Network,
    per_layer: Sequence[np.ndarray],
    scale: bool = False,
    include_dense: bool = True,
) -> Dict[NeuronId, float]:
    """Per-neuron values of one trace, optionally min-max scaled per layer."""
    values: Dict[NeuronId, float] = {}
    for layer in coverable_layers(net, include_dense):
        vec = layer_neuron_values(net, per_layer, layer)
        if scale:
            vec = min_max_scale(vec)
        for unit, value in enumerate(vec):
            values[NeuronId(layer, unit)] = float(value)
    return values
