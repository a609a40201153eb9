"""Unit tests for the joint objective."""

import numpy as np
import pytest

from src.core.objectives import (
    JointConfig,
    ObjectiveError,
    check_compatible,
    joint,
    obj1,
    obj2,
)
from src.nn.neurons import NeuronId
from tests.helpers import linear_net, mlp_net

H = 1e-5


def numeric_gradient(fn, x):
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        bump = np.zeros_like(x)
        bump[idx] = H
        grad[idx] = (fn(x + bump) - fn(x - bump)) / (2 * H)
    return grad


class TestObj1:
    """Test the differential objective."""

    def setup_method(self):
        """Set up test fixtures."""
        # Constant probabilities: net A gives class 0 p=0.6, net B gives 0.8
        self.a = linear_net(np.zeros((2, 1)), np.log([0.6, 0.4]), model_id="a")
        self.b = linear_net(np.zeros((2, 1)), np.log([0.8, 0.2]), model_id="b")
        self.x = np.array([0.5])

    def test_value_arithmetic(self):
        """0.6 - 1 * 0.8 = -0.2 with model 1 as the deviant."""
        result = obj1([self.a, self.b], 1, 0, self.x, lambda1=1.0)
        assert result.value == pytest.approx(-0.2)

    def test_lambda1_zero(self):
        """With lambda1 = 0 only the other models count."""
        result = obj1([self.a, self.b], 1, 0, self.x, lambda1=0.0)
        assert result.value == pytest.approx(0.6)

    def test_gradient_matches_finite_differences(self):
        """Gradient over three random networks agrees with central differences."""
        nets = [mlp_net(seed=s, model_id=f"m{s}") for s in range(3)]
        x = np.random.default_rng(4).uniform(size=5)
        result = obj1(nets, 2, 1, x, lambda1=1.5)
        numeric = numeric_gradient(lambda z: obj1(nets, 2, 1, z, 1.5).value, x)
        np.testing.assert_allclose(result.gradient, numeric, atol=1e-8)

    def test_needs_two_networks(self):
        """A single network cannot be tested differentially."""
        with pytest.raises(ObjectiveError, match="at least two"):
            obj1([self.a], 0, 0, self.x)

    def test_deviant_out_of_range(self):
        """The deviant index must address a network."""
        with pytest.raises(ObjectiveError, match="out of range"):
            obj1([self.a, self.b], 2, 0, self.x)

    def test_incompatible_networks(self):
        """Networks must share input shape and class count."""
        with pytest.raises(ObjectiveError, match="input shape"):
            check_compatible([self.a, mlp_net()])
        three = linear_net(np.zeros((3, 1)), np.zeros(3))
        with pytest.raises(ObjectiveError, match="classes"):
            check_compatible([self.a, three])


class TestObj2AndJoint:
    """Test the coverage objective and the weighted combination."""

    def setup_method(self):
        """Set up test fixtures."""
        self.w = np.array([[0.5, -1.0, 2.0], [1.0, 0.0, 0.0]])
        self.linear = linear_net(self.w, [0.0, 0.0], model_id="lin")
        self.other = linear_net(-self.w, [0.1, 0.0], model_id="other")
        self.x = np.array([0.2, 0.1, 0.3])

    def test_linear_neuron_gradient(self):
        """A linear unit w . x has gradient w."""
        result = obj2([(self.linear, NeuronId(0, 0))], self.x)
        assert result.value == pytest.approx(float(self.w[0] @ self.x))
        np.testing.assert_array_equal(result.gradient, self.w[0])

    def test_additivity(self):
        """Two targets sum their single-target values."""
        first = obj2([(self.linear, NeuronId(0, 0))], self.x)
        second = obj2([(self.other, NeuronId(0, 1))], self.x)
        both = obj2([(self.linear, NeuronId(0, 0)), (self.other, NeuronId(0, 1))], self.x)
        assert both.value == pytest.approx(first.value + second.value)
        np.testing.assert_allclose(both.gradient, first.gradient + second.gradient)

    def test_invalid_target(self):
        """A neuron outside the network is rejected."""
        with pytest.raises(ObjectiveError, match="Invalid neuron for 'lin'"):
            obj2([(self.linear, NeuronId(0, 7))], self.x)
        with pytest.raises(ObjectiveError, match="No neuron targets"):
            obj2([], self.x)

    def test_lambda2_zero_is_obj1(self):
        """With lambda2 = 0 the joint objective is obj1 exactly."""
        nets = [self.linear, self.other]
        targets = [NeuronId(0, 0), NeuronId(0, 1)]
        result = joint(nets, 0, 1, targets, self.x, JointConfig(1.0, 0.0))
        first = obj1(nets, 0, 1, self.x, 1.0)
        assert result.value == first.value
        np.testing.assert_array_equal(result.gradient, first.gradient)

    def test_joint_combination(self):
        """joint = obj1 + lambda2 * obj2 in value and gradient."""
        nets = [self.linear, self.other]
        targets = [NeuronId(0, 0), NeuronId(0, 1)]
        cfg = JointConfig(1.0, 1.0)
        first = obj1(nets, 0, 1, self.x, 1.0)
        second = obj2(list(zip(nets, targets)), self.x)
        result = joint(nets, 0, 1, targets, self.x, cfg)
        assert result.value == pytest.approx(first.value + second.value)
        np.testing.assert_allclose(result.gradient, first.gradient + second.gradient)

    def test_invalid_weights(self):
        """Negative or non-finite lambdas are rejected."""
        with pytest.raises(ObjectiveError, match="lambda2"):
            JointConfig(1.0, -0.1)
        with pytest.raises(ObjectiveError, match="lambda1"):
            JointConfig(float("nan"), 0.1)
