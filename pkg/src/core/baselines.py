"""Comparison input sources: random held-out selection and one-step FGSM."""

from typing import Dict, List, Mapping, Sequence

import numpy as np

from src.core.coverage import coverage_ratio
from src.nn.autodiff import ClassLogit, Tape, WeightedSum
from src.nn.dataset import Dataset
from src.nn.network import Network
from src.utils.logger import get_logger

logger = get_logger(__name__)

CoverageTable = Dict[str, Dict[float, List[float]]]


class FGSM:
    """
    Fast gradient sign perturbation of inputs against one model.

    x_adv = clip(x + epsilon * sign(grad_x CE(x, y)), 0, 1)
    """

    def __init__(self, net: Network, epsilon: float = 0.3):
        """
        Args:
            net: Model the perturbation is computed against
            epsilon: Maximum per-pixel change
        """
        if epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {epsilon}")
        self.net = net
        self.epsilon = epsilon

    def loss_gradient(self, x: np.ndarray, label: int) -> np.ndarray:
        tape = Tape(self.net, x)
        probs = tape.trace.final_probs
        # d CE / d z_k = p_k - [k == y]
        terms = tuple(
            (ClassLogit(k), float(probs[k]) - (1.0 if k == label else 0.0))
            for k in range(self.net.num_classes)
        )
        return tape.gradient(WeightedSum(terms))

    def attack(self, inputs: np.ndarray, labels: Sequence[int]) -> np.ndarray:
        """Perturb every input against its label."""
        adversarial = np.empty_like(np.asarray(inputs, dtype=np.float64))
        for i, (x, label) in enumerate(zip(inputs, labels)):
            grad_sign = np.sign(self.loss_gradient(x, int(label)))
            adversarial[i] = np.clip(x + self.epsilon * grad_sign, 0.0, 1.0)
        return adversarial

    def __repr__(self) -> str:
        return f"FGSM(epsilon={self.epsilon})"


def fgsm(net: Network, inputs: np.ndarray, labels: Sequence[int], epsilon: float) -> np.ndarray:
    return FGSM(net, epsilon).attack(inputs, labels)


def random_selection(dataset: Dataset, count: int, rng: np.random.Generator) -> Dataset:
    """``count`` samples drawn without replacement."""
    if not 0 <= count <= len(dataset):
        raise ValueError(f"Cannot select {count} of {len(dataset)} samples")
    return dataset.subset(rng.choice(len(dataset), size=count, replace=False))


def compare_coverage(
    nets: Sequence[Network],
    inputs_by_method: Mapping[str, np.ndarray],
    thresholds: Sequence[float],
    scale: bool = False,
    include_dense: bool = True,
) -> CoverageTable:
    """
    Neuron coverage each input source reaches on each model.

    Returns:
        method -> threshold -> coverage per model (in ``nets`` order)
    """
    table: CoverageTable = {}
    for method, inputs in inputs_by_method.items():
        table[method] = {}
        for t in thresholds:
            table[method][t] = [
                coverage_ratio(net, inputs, t, scale, include_dense) if len(inputs) else 0.0
                for net in nets
            ]
            logger.debug(f"{method} t={t:g}: {table[method][t]}")
    return table
