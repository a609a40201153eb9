"""Network representation, forward pass and differentiation."""

from .dataset import Dataset
from .layers import LayerKind, LayerSpec, NetworkError
from .network import ActivationTrace, Network, forward, predict
from .neurons import NeuronId

__all__ = [
    "ActivationTrace",
    "Dataset",
    "LayerKind",
    "LayerSpec",
    "Network",
    "NetworkError",
    "NeuronId",
    "forward",
    "predict",
]
