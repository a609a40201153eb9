"""Labelled input batches used as training data and as seed sets."""

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from src.nn.layers import NetworkError, Shape


@dataclass(frozen=True, eq=False)
class Dataset:
    """N inputs with normalized values in [0, 1] and their class labels."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if inputs.ndim < 2:
            raise NetworkError(f"Dataset inputs need a batch axis, got {inputs.shape}")
        if inputs.shape[0] != labels.shape[0]:
            raise NetworkError(
                f"Dataset has {inputs.shape[0]} inputs but {labels.shape[0]} labels"
            )
        if not np.all(np.isfinite(inputs)):
            raise NetworkError("Dataset inputs contain non-finite values")
        if inputs.size and (inputs.min() < 0.0 or inputs.max() > 1.0):
            raise NetworkError("Dataset inputs must be normalized to [0, 1]")
        if labels.size and labels.min() < 0:
            raise NetworkError("Dataset labels must be nonnegative")
        inputs.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def input_shape(self) -> Shape:
        return tuple(int(d) for d in self.inputs.shape[1:])

    def subset(self, indices: Iterable[int]) -> "Dataset":
        """Dataset restricted to the given sample indices, in that order."""
        idx = np.asarray(list(indices), dtype=np.int64)
        return Dataset(self.inputs[idx], self.labels[idx])

    def take(self, limit: Optional[int]) -> "Dataset":
        """First ``limit`` samples (all of them when limit is None)."""
        if limit is None or limit >= len(self):
            return self
        return Dataset(self.inputs[:limit], self.labels[:limit])

    def with_labels(self, labels: Sequence[int]) -> "Dataset":
        return Dataset(self.inputs, np.asarray(labels))

    def check_labels(self, num_classes: int) -> None:
        """
        Raises:
            NetworkError: If a label is outside [0, num_classes)
        """
        if len(self) and int(self.labels.max()) >= num_classes:
            raise NetworkError(
                f"Label {int(self.labels.max())} out of range for {num_classes} classes"
            )

    @staticmethod
    def concat(first: "Dataset", second: "Dataset") -> "Dataset":
        if len(first) and len(second) and first.input_shape != second.input_shape:
            raise NetworkError(
                f"Cannot join datasets of shapes {first.input_shape} and "
                f"{second.input_shape}"
            )
        return Dataset(
            np.concatenate([first.inputs, second.inputs], axis=0),
            np.concatenate([first.labels, second.labels], axis=0),
        )
