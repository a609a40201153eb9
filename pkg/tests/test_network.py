"""Unit tests for networks, forward passes, datasets and architectures."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from src.nn.architectures import (
    PRESETS,
    build_network,
    format_architecture,
    parse_architecture,
    shrink_templates,
)
from src.nn.dataset import Dataset
from src.nn.layers import LayerSpec, NetworkError
from src.nn.network import (
    Network,
    accuracy,
    forward,
    predict,
    predict_batch,
)
from tests.helpers import conv_net, linear_net, mlp_net


class TestNetwork:
    """Test Network validation and identity."""

    def test_missing_parameter(self):
        """Every declared parameter must be present."""
        with pytest.raises(NetworkError, match="missing parameter 'fc.b'"):
            Network((LayerSpec.dense(2, 2, "fc"),), {"fc.w": np.eye(2)}, (2,), 2)

    def test_wrong_parameter_shape(self):
        """Parameter shapes are checked against the layer."""
        with pytest.raises(NetworkError, match="has shape"):
            Network(
                (LayerSpec.dense(2, 2, "fc"),),
                {"fc.w": np.eye(3), "fc.b": np.zeros(2)},
                (2,),
                2,
            )

    def test_softmax_must_be_last(self):
        """Softmax anywhere but the end is rejected."""
        layers = (LayerSpec.softmax(), LayerSpec.dense(2, 2, "fc"))
        with pytest.raises(NetworkError, match="not the final layer"):
            Network(layers, {"fc.w": np.eye(2), "fc.b": np.zeros(2)}, (2,), 2)

    def test_class_count_must_match_output(self):
        """The final output width is the class count."""
        with pytest.raises(NetworkError, match="does not match 3 classes"):
            Network(
                (LayerSpec.dense(2, 2, "fc"),),
                {"fc.w": np.eye(2), "fc.b": np.zeros(2)},
                (2,),
                3,
            )

    def test_non_finite_parameters(self):
        """NaN weights are rejected."""
        with pytest.raises(NetworkError, match="non-finite"):
            linear_net([[np.nan, 0.0], [0.0, 1.0]], [0.0, 0.0])

    def test_parameters_are_read_only(self):
        """Parameters cannot be modified after construction."""
        net = linear_net(np.eye(2), [0.0, 0.0])
        with pytest.raises(ValueError):
            net.params["fc.w"][0, 0] = 5.0
        with pytest.raises(TypeError):
            net.params["fc.w"] = np.zeros((2, 2))  # type: ignore[index]

    def test_equality_and_with_params(self):
        """Networks compare equal field-by-field; with_params copies."""
        a = mlp_net(seed=1)
        b = mlp_net(seed=1)
        c = mlp_net(seed=2)
        assert a == b
        assert a != c
        renamed = a.with_params(c.params, model_id="other")
        assert renamed.model_id == "other"
        assert renamed == c.with_params(c.params, model_id="other")

    def test_describe(self):
        """Description lists layers and parameter count."""
        info = mlp_net().describe()
        assert info["parameters"] == 5 * 4 + 4 + 4 * 3 + 3
        assert [layer["kind"] for layer in info["layers"]] == [
            "Dense",
            "ReLU",
            "Dense",
            "Softmax",
        ]


class TestForward:
    """Test forward and predict."""

    def test_dense_without_softmax(self):
        """Layer output of a 1x1 Dense net is plain arithmetic."""
        net = linear_net([[2.0]], [0.5], softmax=False)
        trace = forward(net, np.array([3.0]))
        assert trace.per_layer[0].tolist() == [6.5]
        assert trace.logits.tolist() == [6.5]

    def test_softmax_probabilities_sum_to_one(self):
        """Final probabilities are normalized."""
        trace = forward(conv_net(), np.full((1, 6, 6), 0.5))
        assert abs(float(np.sum(trace.final_probs)) - 1.0) < 1e-9
        assert len(trace.per_layer) == 6

    def test_predict_picks_largest(self):
        """Probabilities [0.1, 0.7, 0.2] predict class 1."""
        logits = np.log([0.1, 0.7, 0.2])
        net = linear_net(np.zeros((3, 1)), logits)
        label, probs = predict(net, np.array([0.0]))
        assert label == 1
        np.testing.assert_allclose(probs, [0.1, 0.7, 0.2])

    def test_predict_tie_goes_to_lowest_index(self):
        """Equal probabilities predict the lowest class."""
        net = linear_net(np.zeros((2, 1)), [0.0, 0.0])
        assert predict(net, np.array([1.0]))[0] == 0

    def test_rejected_input(self):
        """Inputs of the wrong shape are rejected."""
        with pytest.raises(NetworkError, match="Rejected input"):
            forward(mlp_net(), np.zeros(4))
        with pytest.raises(NetworkError, match="non-finite"):
            forward(mlp_net(), np.array([0.0, 1.0, np.inf, 0.0, 0.0]))

    def test_batch_prediction_matches_single(self):
        """Batched predictions equal one-by-one predictions."""
        net = conv_net(seed=4)
        inputs = np.random.default_rng(0).uniform(size=(7, 1, 6, 6))
        single = [predict(net, x)[0] for x in inputs]
        assert predict_batch(net, inputs).tolist() == single

    def test_accuracy(self):
        """Accuracy counts correct predictions; empty input gives 0."""
        net = linear_net([[1.0], [-1.0]], [0.0, 0.0])
        inputs = np.array([[1.0], [-1.0], [2.0]])
        assert accuracy(net, inputs, np.array([0, 1, 1])) == pytest.approx(2 / 3)
        assert accuracy(net, np.zeros((0, 1)), np.array([], dtype=int)) == 0.0

    def test_forward_is_pure(self):
        """Forward passes do not modify their input and repeat exactly."""
        x = np.random.default_rng(1).uniform(size=(1, 6, 6))
        before = x.copy()
        net = conv_net()
        first = forward(net, x)
        second = forward(net, x)
        np.testing.assert_array_equal(x, before)
        for a, b in zip(first.per_layer, second.per_layer):
            np.testing.assert_array_equal(a, b)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (1, 6, 6), elements=st.floats(0.0, 1.0)))
    def test_probabilities_property(self, x):
        """Any valid image yields a probability vector."""
        probs = forward(conv_net(), x).final_probs
        assert np.all(probs >= 0.0)
        assert abs(float(probs.sum()) - 1.0) < 1e-9


class TestDataset:
    """Test Dataset validation and helpers."""

    def test_rejects_unnormalized(self):
        """Inputs outside [0, 1] are rejected."""
        with pytest.raises(NetworkError, match="normalized"):
            Dataset(np.array([[1.5]]), np.array([0]))

    def test_rejects_count_mismatch(self):
        """Inputs and labels must pair up."""
        with pytest.raises(NetworkError, match="2 inputs but 1 labels"):
            Dataset(np.zeros((2, 3)), np.array([0]))

    def test_take_and_subset(self):
        """take keeps a prefix; subset keeps the given order."""
        data = Dataset(np.linspace(0, 1, 5)[:, None], np.arange(5))
        assert len(data.take(None)) == 5
        assert data.take(2).labels.tolist() == [0, 1]
        assert data.subset([4, 0]).labels.tolist() == [4, 0]

    def test_concat_and_labels(self):
        """Concatenation joins samples; labels are checked against classes."""
        a = Dataset(np.zeros((2, 3)), np.array([0, 1]))
        b = Dataset(np.ones((1, 3)), np.array([4]))
        joined = Dataset.concat(a, b)
        assert len(joined) == 3
        assert joined.input_shape == (3,)
        with pytest.raises(NetworkError, match="out of range"):
            joined.check_labels(3)


class TestArchitectures:
    """Test architecture parsing and construction."""

    def test_parse_round_trip_text(self):
        """Formatting parsed templates gives back canonical text."""
        text = "conv:4:5x5, relu, pool:2, flatten, dense:10, softmax"
        assert format_architecture(parse_architecture(text)) == text

    def test_unknown_token(self):
        """Unknown layer tokens are rejected by name."""
        with pytest.raises(NetworkError, match="Unknown layer token: 'lstm:4'"):
            parse_architecture("dense:4, lstm:4")

    def test_lenet1_on_mnist_shape(self):
        """LeNet-1 builds on 28x28 inputs with 4 + 12 + 10 neurons."""
        net = build_network(
            parse_architecture("lenet1"), (1, 28, 28), 10, np.random.default_rng(0)
        )
        assert net.layer_shapes[-1] == (10,)
        assert net.layer_shapes[0] == (4, 24, 24)
        assert set(PRESETS) == {"lenet1", "lenet4", "lenet5"}

    def test_build_is_deterministic(self):
        """Equal rng seeds give equal networks with zero biases."""
        templates = parse_architecture("dense:8, relu, dense:3, softmax")
        a = build_network(templates, (4,), 3, np.random.default_rng(7))
        b = build_network(templates, (4,), 3, np.random.default_rng(7))
        assert a == b
        assert not np.any(a.params["l0.b"])

    def test_last_dense_sized_to_classes(self):
        """The final Dense layer always has one unit per class."""
        net = build_network(
            parse_architecture("dense:8, relu, dense:99, softmax"),
            (4,),
            5,
            np.random.default_rng(0),
        )
        assert net.params["l2.w"].shape == (5, 8)

    def test_shrink_templates(self):
        """Shrinking removes units from hidden layers only."""
        templates = parse_architecture("conv:4:3x3, relu, flatten, dense:6, relu, dense:10")
        shrunk = shrink_templates(templates, 1)
        assert [t.size for t in shrunk if t.size] == [3, 5, 10]
        with pytest.raises(NetworkError, match="cannot remove"):
            shrink_templates(templates, 4)
