"""Minibatch SGD training and controlled model variants."""

from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from src.nn.architectures import (
    build_network,
    format_architecture,
    parse_architecture,
    shrink_templates,
)
from src.nn.autodiff import cross_entropy, loss_and_param_gradients
from src.nn.dataset import Dataset
from src.nn.layers import NetworkError
from src.nn.network import Network
from src.utils.config import ConfigError, TrainConfig
from src.utils.logger import get_logger

logger = get_logger(__name__)

VARIANT_AXES = ("samples", "units", "epochs")


class TrainingError(Exception):
    """Raised for unusable training data or variant requests."""
    pass


@dataclass
class TrainingHistory:
    """Full-dataset loss before training and after every epoch."""

    initial_loss: float
    epoch_losses: List[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else self.initial_loss

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            "initial_loss": self.initial_loss,
            "epoch_losses": list(self.epoch_losses),
            "final_loss": self.final_loss,
        }


def fit(
    net: Network,
    data: Dataset,
    epochs: int,
    batch_size: int,
    learning_rate: float,
    rng: np.random.Generator,
) -> Tuple[Network, TrainingHistory]:
    """
    Continue training a network with plain SGD on mean cross-entropy.

    Args:
        net: Starting network (left unchanged)
        data: Training samples
        epochs: Passes over the data; 0 returns ``net`` itself
        batch_size: Samples per update
        learning_rate: SGD step size
        rng: Source of the per-epoch shuffle order

    Returns:
        Tuple of (trained network, loss history)

    Raises:
        TrainingError: If the data is empty or a label is out of range
    """
    if len(data) == 0:
        raise TrainingError("Training data is empty")
    try:
        data.check_labels(net.num_classes)
    except NetworkError as e:
        raise TrainingError(str(e)) from e
    if data.input_shape != net.input_shape:
        raise TrainingError(
            f"Data shape {data.input_shape} does not match model input {net.input_shape}"
        )

    history = TrainingHistory(cross_entropy(net, data))
    if epochs <= 0:
        return net, history

    params = {name: np.array(value) for name, value in net.params.items()}
    current = net
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(data))
        for start in range(0, len(data), batch_size):
            batch = order[start:start + batch_size]
            _, grads = loss_and_param_gradients(
                current, data.inputs[batch], data.labels[batch]
            )
            for name, grad in grads.items():
                params[name] -= learning_rate * grad
            current = net.with_params(params)
        history.epoch_losses.append(cross_entropy(current, data))
        logger.info(
            f"'{net.model_id}' epoch {epoch}/{epochs}: loss {history.epoch_losses[-1]:.6f}"
        )
    return current, history


def train_with_history(cfg: TrainConfig, data: Dataset) -> Tuple[Network, TrainingHistory]:
    """
    Build a network from a config and train it from scratch.

    The config's rng_seed drives initialization first, then the shuffle order,
    so equal configs give bit-identical networks.

    Raises:
        ConfigError: If the config or architecture is invalid
        TrainingError: If the data is empty or mislabelled
    """
    cfg.validate()
    data = data.take(cfg.sample_limit)
    if len(data) == 0:
        raise TrainingError("Training data is empty")
    rng = np.random.default_rng(cfg.rng_seed)
    try:
        templates = parse_architecture(cfg.architecture)
        net = build_network(
            templates, data.input_shape, cfg.num_classes, rng, cfg.model_id
        )
    except NetworkError as e:
        raise ConfigError(f"Invalid value for 'architecture': {e}") from e
    logger.info(
        f"Training '{cfg.model_id}' ({net.param_count()} parameters) on "
        f"{len(data)} samples for {cfg.epochs} epochs"
    )
    return fit(net, data, cfg.epochs, cfg.batch_size, cfg.learning_rate, rng)


def train(cfg: TrainConfig, data: Dataset) -> Network:
    """Train a network from scratch; see :func:`train_with_history`."""
    return train_with_history(cfg, data)[0]


def variant_config(base: TrainConfig, data_size: int, axis: str, delta: int) -> TrainConfig:
    """
    Config of the variant ``delta`` steps away from ``base`` along ``axis``.

    Raises:
        TrainingError: On an unknown axis or an invalid delta
    """
    if axis not in VARIANT_AXES:
        raise TrainingError(f"Unknown variant axis '{axis}' (expected {VARIANT_AXES})")
    if delta < 0:
        raise TrainingError(f"Variant delta must be >= 0, got {delta}")
    model_id = base.model_id if delta == 0 else f"{base.model_id}-{axis}{delta}"

    if axis == "samples":
        limit = min(base.sample_limit or data_size, data_size) - delta
        if limit < 1:
            raise TrainingError(f"Cannot remove {delta} of {data_size} training samples")
        sample_limit = base.sample_limit if delta == 0 else limit
        return replace(base, sample_limit=sample_limit, model_id=model_id)

    if axis == "units":
        if delta == 0:
            return base
        try:
            templates = shrink_templates(parse_architecture(base.architecture), delta)
        except NetworkError as e:
            raise TrainingError(str(e)) from e
        return replace(base, architecture=format_architecture(templates), model_id=model_id)

    return replace(base, epochs=base.epochs + delta, model_id=model_id)


def make_variants(
    base: TrainConfig, data: Dataset, axis: str, deltas: Sequence[int]
) -> List[Network]:
    """
    Train one network per delta along a variation axis.

    ``samples`` removes training samples, ``units`` removes filters or hidden
    units from every hidden layer and ``epochs`` adds training epochs. Every
    variant shares the base rng_seed, so delta 0 reproduces the base network.
    """
    configs = [variant_config(base, len(data), axis, int(d)) for d in deltas]
    return [train(cfg, data) for cfg in configs]
