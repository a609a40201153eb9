"""Layer specifications and their batched forward/backward kernels.

Every kernel works on arrays with a leading batch axis. Single inputs are
pushed through with a batch of one by the callers in ``network`` and
``autodiff``.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

Shape = Tuple[int, ...]


class NetworkError(ValueError):
    """Raised for malformed networks and rejected inputs."""
    pass


class LayerKind(str, Enum):
    """Supported layer kinds."""

    DENSE = "Dense"
    CONV2D = "Conv2D"
    RELU = "ReLU"
    MAXPOOL2D = "MaxPool2D"
    FLATTEN = "Flatten"
    SOFTMAX = "Softmax"


PARAMETRIC_KINDS = (LayerKind.DENSE, LayerKind.CONV2D)


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a network: kind, kind-specific hyperparameters and the
    names of its weight/bias tensors."""

    kind: LayerKind
    hyperparams: Dict[str, int] = field(default_factory=dict)
    param_names: Tuple[str, ...] = ()

    @classmethod
    def dense(cls, in_units: int, out_units: int, name: str) -> "LayerSpec":
        return cls(
            LayerKind.DENSE,
            {"in_units": int(in_units), "out_units": int(out_units)},
            (f"{name}.w", f"{name}.b"),
        )

    @classmethod
    def conv2d(
        cls,
        in_channels: int,
        out_channels: int,
        kernel_h: int,
        kernel_w: int,
        name: str,
        stride: int = 1,
    ) -> "LayerSpec":
        return cls(
            LayerKind.CONV2D,
            {
                "in_channels": int(in_channels),
                "out_channels": int(out_channels),
                "kernel_h": int(kernel_h),
                "kernel_w": int(kernel_w),
                "stride": int(stride),
            },
            (f"{name}.w", f"{name}.b"),
        )

    @classmethod
    def relu(cls) -> "LayerSpec":
        return cls(LayerKind.RELU)

    @classmethod
    def maxpool2d(cls, window: int, stride: Optional[int] = None) -> "LayerSpec":
        return cls(
            LayerKind.MAXPOOL2D,
            {"window": int(window), "stride": int(stride or window)},
        )

    @classmethod
    def flatten(cls) -> "LayerSpec":
        return cls(LayerKind.FLATTEN)

    @classmethod
    def softmax(cls) -> "LayerSpec":
        return cls(LayerKind.SOFTMAX)

    @property
    def is_parametric(self) -> bool:
        return self.kind in PARAMETRIC_KINDS

    def param_shapes(self) -> Dict[str, Shape]:
        """Expected shape of every named parameter tensor."""
        hp = self.hyperparams
        if self.kind == LayerKind.DENSE:
            w_name, b_name = self.param_names
            return {
                w_name: (hp["out_units"], hp["in_units"]),
                b_name: (hp["out_units"],),
            }
        if self.kind == LayerKind.CONV2D:
            w_name, b_name = self.param_names
            return {
                w_name: (
                    hp["out_channels"],
                    hp["in_channels"],
                    hp["kernel_h"],
                    hp["kernel_w"],
                ),
                b_name: (hp["out_channels"],),
            }
        return {}

    def output_shape(self, input_shape: Shape) -> Shape:
        """
        Infer the output shape for a single (unbatched) input.

        Raises:
            NetworkError: If the input shape is incompatible with the layer
        """
        hp = self.hyperparams
        if any(d < 1 for d in input_shape):
            raise NetworkError(f"{self.kind.value}: empty input shape {input_shape}")

        if self.kind == LayerKind.DENSE:
            if input_shape != (hp["in_units"],):
                raise NetworkError(
                    f"Dense expects ({hp['in_units']},) input, got {input_shape}"
                )
            return (hp["out_units"],)

        if self.kind == LayerKind.CONV2D:
            if len(input_shape) != 3 or input_shape[0] != hp["in_channels"]:
                raise NetworkError(
                    f"Conv2D expects ({hp['in_channels']}, H, W) input, got {input_shape}"
                )
            _, h, w = input_shape
            kh, kw, s = hp["kernel_h"], hp["kernel_w"], hp["stride"]
            if h < kh or w < kw or s < 1:
                raise NetworkError(f"Conv2D kernel {kh}x{kw} does not fit {input_shape}")
            return (hp["out_channels"], (h - kh) // s + 1, (w - kw) // s + 1)

        if self.kind == LayerKind.MAXPOOL2D:
            if len(input_shape) != 3:
                raise NetworkError(f"MaxPool2D expects (C, H, W) input, got {input_shape}")
            c, h, w = input_shape
            k, s = hp["window"], hp["stride"]
            if h < k or w < k or s < 1:
                raise NetworkError(f"MaxPool2D window {k} does not fit {input_shape}")
            return (c, (h - k) // s + 1, (w - k) // s + 1)

        if self.kind == LayerKind.FLATTEN:
            return (int(np.prod(input_shape)),)

        if self.kind == LayerKind.SOFTMAX:
            if len(input_shape) != 1:
                raise NetworkError(f"Softmax expects a vector, got {input_shape}")
            return input_shape

        return input_shape

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            "kind": self.kind.value,
            "hyperparams": dict(self.hyperparams),
            "param_names": list(self.param_names),
        }


def softmax_rows(z: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def _conv_windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (B, C, OH, OW, kh, kw) view
    return sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def layer_forward(
    spec: LayerSpec, params: Mapping[str, np.ndarray], x: np.ndarray
) -> Tuple[np.ndarray, Any]:
    """
    Apply one layer to a batch.

    Returns:
        Tuple of (output batch, cache for the backward pass)
    """
    kind = spec.kind
    if kind == LayerKind.DENSE:
        w = params[spec.param_names[0]]
        b = params[spec.param_names[1]]
        return x @ w.T + b, x

    if kind == LayerKind.CONV2D:
        w = params[spec.param_names[0]]
        b = params[spec.param_names[1]]
        kh, kw, s = w.shape[2], w.shape[3], spec.hyperparams["stride"]
        windows = _conv_windows(x, kh, kw, s)
        y = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))
        y = np.ascontiguousarray(y.transpose(0, 3, 1, 2)) + b[None, :, None, None]
        return y, (x.shape, windows)

    if kind == LayerKind.RELU:
        return np.maximum(x, 0.0), x > 0.0

    if kind == LayerKind.MAXPOOL2D:
        k, s = spec.hyperparams["window"], spec.hyperparams["stride"]
        windows = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        flat = windows.reshape(windows.shape[:4] + (k * k,))
        # argmax picks the first row-major maximum on ties
        arg = np.argmax(flat, axis=-1)
        y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        return y, (x.shape, arg)

    if kind == LayerKind.FLATTEN:
        return x.reshape(x.shape[0], -1), x.shape

    if kind == LayerKind.SOFTMAX:
        p = softmax_rows(x)
        return p, p

    raise NetworkError(f"Unknown layer kind: {kind}")


def layer_backward(
    spec: LayerSpec,
    params: Mapping[str, np.ndarray],
    cache: Any,
    grad_out: np.ndarray,
    want_params: bool = False,
) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """
    Propagate the gradient of a scalar w.r.t. a layer's output back to its
    input, optionally returning the gradients of its parameters (summed over
    the batch).
    """
    kind = spec.kind
    param_grads: Dict[str, np.ndarray] = {}

    if kind == LayerKind.DENSE:
        x = cache
        w = params[spec.param_names[0]]
        if want_params:
            param_grads[spec.param_names[0]] = grad_out.T @ x
            param_grads[spec.param_names[1]] = grad_out.sum(axis=0)
        return grad_out @ w, param_grads

    if kind == LayerKind.CONV2D:
        x_shape, windows = cache
        w = params[spec.param_names[0]]
        out_c, _, kh, kw = w.shape
        s = spec.hyperparams["stride"]
        oh, ow = grad_out.shape[2], grad_out.shape[3]
        if want_params:
            param_grads[spec.param_names[0]] = np.tensordot(
                grad_out, windows, axes=([0, 2, 3], [0, 2, 3])
            )
            param_grads[spec.param_names[1]] = grad_out.sum(axis=(0, 2, 3))
        grad_in = np.zeros(x_shape)
        for i in range(kh):
            for j in range(kw):
                contrib = np.tensordot(grad_out, w[:, :, i, j], axes=([1], [0]))
                grad_in[:, :, i:i + s * oh:s, j:j + s * ow:s] += contrib.transpose(
                    0, 3, 1, 2
                )
        return grad_in, param_grads

    if kind == LayerKind.RELU:
        return grad_out * cache, param_grads

    if kind == LayerKind.MAXPOOL2D:
        x_shape, arg = cache
        k, s = spec.hyperparams["window"], spec.hyperparams["stride"]
        oh, ow = arg.shape[2], arg.shape[3]
        grad_in = np.zeros(x_shape)
        for idx in range(k * k):
            di, dj = divmod(idx, k)
            grad_in[:, :, di:di + s * oh:s, dj:dj + s * ow:s] += np.where(
                arg == idx, grad_out, 0.0
            )
        return grad_in, param_grads

    if kind == LayerKind.FLATTEN:
        return grad_out.reshape(cache), param_grads

    if kind == LayerKind.SOFTMAX:
        p = cache
        inner = np.sum(grad_out * p, axis=-1, keepdims=True)
        return p * (grad_out - inner), param_grads

    raise NetworkError(f"Unknown layer kind: {kind}")
