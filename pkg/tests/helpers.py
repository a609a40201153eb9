"""Small hand-built networks and datasets shared by the test modules."""

import numpy as np

from src.nn.architectures import build_network, parse_architecture
from src.nn.dataset import Dataset
from src.nn.layers import LayerSpec
from src.nn.network import Network


def linear_net(weights, bias, model_id="linear", softmax=True):
    """Single Dense layer over a flat input, optionally followed by Softmax."""
    w = np.asarray(weights, dtype=np.float64)
    layers = [LayerSpec.dense(w.shape[1], w.shape[0], "fc")]
    if softmax:
        layers.append(LayerSpec.softmax())
    return Network(
        tuple(layers),
        {"fc.w": w, "fc.b": np.asarray(bias, dtype=np.float64)},
        (w.shape[1],),
        w.shape[0],
        model_id,
    )


def coverage_net(model_id="cov"):
    """
    Dense(2->6) + ReLU + Dense(6->2) + Softmax with constant hidden outputs.

    Hidden units read [1, 1, 1, 0, 0, 0] and logits [1, 2] for every input,
    so 5 of the 8 coverable neurons are above a threshold of 0.
    """
    layers = (
        LayerSpec.dense(2, 6, "h"),
        LayerSpec.relu(),
        LayerSpec.dense(6, 2, "out"),
        LayerSpec.softmax(),
    )
    params = {
        "h.w": np.zeros((6, 2)),
        "h.b": np.array([1.0, 1.0, 1.0, -1.0, -1.0, 0.0]),
        "out.w": np.zeros((2, 6)),
        "out.b": np.array([1.0, 2.0]),
    }
    return Network(layers, params, (2,), 2, model_id)


def mlp_net(seed=0, model_id="mlp", inputs=5, hidden=4, classes=3):
    text = f"dense:{hidden}, relu, dense:{classes}, softmax"
    rng = np.random.default_rng(seed)
    return build_network(parse_architecture(text), (inputs,), classes, rng, model_id)


def conv_net(seed=0, model_id="conv"):
    """(1, 6, 6) input, two 3x3 filters, 2x2 pooling and a 3-way Dense head."""
    text = "conv:2:3x3, relu, pool:2, flatten, dense:3, softmax"
    rng = np.random.default_rng(seed)
    net = build_network(parse_architecture(text), (1, 6, 6), 3, rng, model_id)
    # Nonzero biases keep channel means away from the ReLU kink
    params = dict(net.params)
    params["l0.b"] = np.array([0.05, -0.02])
    params["l4.b"] = rng.normal(0.0, 0.1, size=3)
    return net.with_params(params)


def random_images(count, seed=0, shape=(1, 6, 6)):
    return np.random.default_rng(seed).uniform(0.0, 1.0, size=(count,) + shape)


def separable_toy(count=40, seed=0):
    """Two well-separated 2-D clusters in [0, 1]: class 0 low-left, class 1 high-right."""
    rng = np.random.default_rng(seed)
    half = count // 2
    low = rng.uniform(0.0, 0.3, size=(half, 2))
    high = rng.uniform(0.7, 1.0, size=(count - half, 2))
    inputs = np.concatenate([low, high])
    labels = np.array([0] * half + [1] * (count - half))
    return Dataset(inputs, labels)


def random_net(rng, model_id="random"):
    """
    Small dense or conv network with N(0, 0.8) weights and biases.

    Dense variants take 2-5 inputs and one or two hidden ReLU layers; conv
    variants read a (1, 4, 4) image through two 2x2 filters.
    """
    classes = int(rng.integers(2, 5))
    if rng.random() < 0.3:
        text = "conv:2:2x2, relu, flatten, dense:2, softmax"
        input_shape = (1, 4, 4)
    else:
        hidden = rng.integers(2, 6, size=int(rng.integers(1, 3)))
        text = "".join(f"dense:{h}, relu, " for h in hidden) + "dense:2, softmax"
        input_shape = (int(rng.integers(2, 6)),)
    net = build_network(parse_architecture(text), input_shape, classes, rng, model_id)
    return net.with_params(
        {name: rng.normal(0.0, 0.8, size=p.shape) for name, p in net.params.items()}
    )


def axis_net(axis, model_id):
    """
    Dense(3->4) + ReLU + Dense(4->2) + Softmax that reads one input axis.

    Hidden units are h0 = relu(2 x[axis] - 1), h1 = relu(1 - 2 x[axis]),
    h2 = relu(x[2] + 0.1) and h3 = relu(-x[0] - 1), which never fires. The
    logits copy h0 and h1, so class 0 is predicted exactly when x[axis] >= 0.5.
    """
    hidden_w = np.zeros((4, 3))
    hidden_w[0, axis] = 2.0
    hidden_w[1, axis] = -2.0
    hidden_w[2, 2] = 1.0
    hidden_w[3, 0] = -1.0
    layers = (
        LayerSpec.dense(3, 4, "h"),
        LayerSpec.relu(),
        LayerSpec.dense(4, 2, "out"),
        LayerSpec.softmax(),
    )
    params = {
        "h.w": hidden_w,
        "h.b": np.array([-1.0, 1.0, 0.1, -1.0]),
        "out.w": np.eye(2, 4),
        "out.b": np.zeros(2),
    }
    return Network(layers, params, (3,), 2, model_id)


def low_corner_seeds(count, seed=0):
    """Inputs with both axes in [0.05, 0.2] and x[2] in [0, 0.1]."""
    rng = np.random.default_rng(seed)
    inputs = np.column_stack(
        [rng.uniform(0.05, 0.2, size=(count, 2)), rng.uniform(0.0, 0.1, size=count)]
    )
    return Dataset(inputs, np.ones(count, dtype=np.int64))
