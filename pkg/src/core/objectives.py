"""Scalar objectives of the joint ascent and their input gradients.

The differential term rewards the other models for keeping class ``c``
while pushing model ``j`` away from it; the coverage term rewards the raw
output of one target neuron per model.
"""

from dataclasses import dataclass
from typing import Any, Dict, Sequence, Tuple

import numpy as np

from src.nn.autodiff import AutodiffError, ClassProb, NeuronOutput, Tape
from src.nn.network import Network
from src.nn.neurons import NeuronId
from src.utils.logger import get_logger

logger = get_logger(__name__)


class ObjectiveError(ValueError):
    """Raised for invalid model sets, indices or neuron targets."""
    pass


@dataclass(frozen=True)
class JointConfig:
    """Weights of the differential term (lambda1) and coverage term (lambda2)."""

    lambda1: float = 1.0
    lambda2: float = 0.1

    def __post_init__(self) -> None:
        for name in ("lambda1", "lambda2"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ObjectiveError(f"{name} must be finite and >= 0, got {value}")

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {"lambda1": self.lambda1, "lambda2": self.lambda2}


@dataclass
class ObjectiveResult:
    """Objective value and its gradient with respect to the input."""

    value: float
    gradient: np.ndarray


def check_compatible(nets: Sequence[Network]) -> None:
    """
    Raises:
        ObjectiveError: If fewer than two networks are given or they disagree
            on input shape or class count
    """
    if len(nets) < 2:
        raise ObjectiveError(f"Need at least two networks, got {len(nets)}")
    first = nets[0]
    for net in nets[1:]:
        if net.input_shape != first.input_shape:
            raise ObjectiveError(
                f"'{net.model_id}' input shape {net.input_shape} differs from "
                f"'{first.model_id}' {first.input_shape}"
            )
        if net.num_classes != first.num_classes:
            raise ObjectiveError(
                f"'{net.model_id}' has {net.num_classes} classes, "
                f"'{first.model_id}' has {first.num_classes}"
            )


def obj1_from_tapes(
    tapes: Sequence[Tape], j: int, c: int, lambda1: float
) -> ObjectiveResult:
    """Differential objective over already recorded forward passes."""
    if len(tapes) < 2:
        raise ObjectiveError(f"Need at least two networks, got {len(tapes)}")
    if not 0 <= j < len(tapes):
        raise ObjectiveError(f"Deviant index {j} out of range for {len(tapes)} networks")

    value = 0.0
    gradient = np.zeros(tapes[0].x.shape)
    for k, tape in enumerate(tapes):
        weight = -lambda1 if k == j else 1.0
        try:
            prob, grad = tape.value_and_gradient(ClassProb(c))
        except AutodiffError as e:
            raise ObjectiveError(str(e)) from e
        value += weight * prob
        gradient = gradient + weight * grad
    return ObjectiveResult(value, gradient)


def obj2_from_tapes(
    tapes: Sequence[Tape], targets: Sequence[NeuronId]
) -> ObjectiveResult:
    """Coverage objective: summed raw outputs of one target neuron per tape."""
    if len(targets) != len(tapes):
        raise ObjectiveError(
            f"Need one target neuron per network: {len(targets)} for {len(tapes)}"
        )
    value = 0.0
    gradient = np.zeros(tapes[0].x.shape)
    for tape, neuron in zip(tapes, targets):
        try:
            out, grad = tape.value_and_gradient(NeuronOutput(neuron))
        except AutodiffError as e:
            raise ObjectiveError(f"Invalid neuron for '{tape.net.model_id}': {e}") from e
        value += out
        gradient = gradient + grad
    return ObjectiveResult(value, gradient)


def joint_from_tapes(
    tapes: Sequence[Tape],
    j: int,
    c: int,
    targets: Sequence[NeuronId],
    cfg: JointConfig,
) -> Tuple[ObjectiveResult, ObjectiveResult, ObjectiveResult]:
    """
    Joint objective obj1 + lambda2 * obj2 together with its two parts.

    Returns:
        Tuple of (joint, obj1, obj2) results
    """
    first = obj1_from_tapes(tapes, j, c, cfg.lambda1)
    second = obj2_from_tapes(tapes, targets)
    combined = ObjectiveResult(
        first.value + cfg.lambda2 * second.value,
        first.gradient + cfg.lambda2 * second.gradient,
    )
    return combined, first, second


def _tapes(nets: Sequence[Network], x: Any) -> list:
    check_compatible(nets)
    return [Tape(net, x) for net in nets]


def obj1(
    nets: Sequence[Network], j: int, c: int, x: Any, lambda1: float = 1.0
) -> ObjectiveResult:
    """
    Differential objective: sum over k != j of F_k(x)[c] minus lambda1 * F_j(x)[c].

    Args:
        nets: Networks under test (at least two)
        j: Index of the network pushed away from class c
        c: Class all networks agreed on for the seed
        x: Current input
        lambda1: Weight of the deviant network's term

    Returns:
        Objective value and gradient with the input's shape

    Raises:
        ObjectiveError: On fewer than two networks or invalid indices
    """
    return obj1_from_tapes(_tapes(nets, x), j, c, lambda1)


def obj2(targets: Sequence[Tuple[Network, NeuronId]], x: Any) -> ObjectiveResult:
    """Summed raw outputs of the given (network, neuron) targets."""
    if not targets:
        raise ObjectiveError("No neuron targets given")
    tapes = [Tape(net, x) for net, _ in targets]
    return obj2_from_tapes(tapes, [neuron for _, neuron in targets])


def joint(
    nets: Sequence[Network],
    j: int,
    c: int,
    targets: Sequence[NeuronId],
    x: Any,
    cfg: JointConfig,
) -> ObjectiveResult:
    """Joint objective obj1 + lambda2 * obj2, with ``targets[k]`` in ``nets[k]``."""
    return joint_from_tapes(_tapes(nets, x), j, c, targets, cfg)[0]
