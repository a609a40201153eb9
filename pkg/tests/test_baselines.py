"""Unit tests for the FGSM and random-selection baselines."""

import numpy as np
import pytest

from src.core.baselines import FGSM, compare_coverage, fgsm, random_selection
from src.core.generator import generate
from src.nn.dataset import Dataset
from src.nn.network import forward
from src.utils.config import GenerationConfig
from tests.helpers import (
    axis_net,
    conv_net,
    coverage_net,
    linear_net,
    low_corner_seeds,
    random_images,
)

THRESHOLDS = [0.0, 0.25, 0.5, 0.75]


def cross_entropy_at(net, x, label):
    return -float(np.log(forward(net, x).final_probs[label]))


class TestFGSM:
    """Test the fast gradient sign baseline."""

    def setup_method(self):
        """Set up test fixtures."""
        self.w = np.array([[1.0, -2.0, 0.5], [-0.5, 1.0, 1.5], [0.0, 0.3, -1.0]])
        self.net = linear_net(self.w, [0.1, 0.0, -0.1], model_id="lin")
        self.x = np.array([0.5, 0.4, 0.6])

    def test_loss_gradient_matches_finite_differences(self):
        """The input gradient of cross-entropy agrees with central differences."""
        h = 1e-6
        grad = FGSM(self.net).loss_gradient(self.x, 1)
        numeric = np.array(
            [
                (
                    cross_entropy_at(self.net, self.x + h * e, 1)
                    - cross_entropy_at(self.net, self.x - h * e, 1)
                )
                / (2 * h)
                for e in np.eye(3)
            ]
        )
        np.testing.assert_allclose(grad, numeric, atol=1e-7)

    def test_attack_raises_loss(self):
        """A small signed step increases the loss of a linear model."""
        adversarial = fgsm(self.net, self.x[None], [1], 0.1)[0]
        assert np.max(np.abs(adversarial - self.x)) == pytest.approx(0.1)
        assert cross_entropy_at(self.net, adversarial, 1) > cross_entropy_at(
            self.net, self.x, 1
        )

    def test_attack_stays_in_range(self):
        """Perturbed images are clipped to [0, 1]."""
        net = conv_net(seed=2)
        inputs = random_images(5, seed=1)
        adversarial = FGSM(net, epsilon=0.7).attack(inputs, [0, 1, 2, 0, 1])
        assert adversarial.shape == inputs.shape
        assert np.all((adversarial >= 0.0) & (adversarial <= 1.0))
        assert np.all(np.abs(adversarial - inputs) <= 0.7 + 1e-12)

    def test_zero_epsilon(self):
        """epsilon = 0 leaves inputs unchanged."""
        inputs = random_images(2, seed=3)
        np.testing.assert_array_equal(fgsm(conv_net(), inputs, [0, 1], 0.0), inputs)

    def test_negative_epsilon(self):
        """Negative perturbation budgets are rejected."""
        with pytest.raises(ValueError, match="epsilon"):
            FGSM(self.net, epsilon=-0.1)
        assert repr(FGSM(self.net, 0.25)) == "FGSM(epsilon=0.25)"


class TestRandomSelection:
    """Test random held-out selection."""

    def setup_method(self):
        """Set up test fixtures."""
        self.data = Dataset(np.linspace(0, 1, 10)[:, None], np.arange(10))

    def test_draws_without_replacement(self):
        """Selected samples are distinct and come from the dataset."""
        chosen = random_selection(self.data, 6, np.random.default_rng(0))
        assert len(chosen) == 6
        assert len(set(chosen.labels.tolist())) == 6

    def test_deterministic(self):
        """Equal rng seeds select the same samples."""
        a = random_selection(self.data, 4, np.random.default_rng(9))
        b = random_selection(self.data, 4, np.random.default_rng(9))
        assert a.labels.tolist() == b.labels.tolist()

    def test_too_many(self):
        """Selecting more samples than exist is rejected."""
        with pytest.raises(ValueError, match="Cannot select 11 of 10"):
            random_selection(self.data, 11, np.random.default_rng(0))


class TestCompareCoverage:
    """Test coverage comparison tables."""

    def test_table_layout(self):
        """Each method maps thresholds to per-model coverage."""
        nets = [coverage_net("a"), coverage_net("b")]
        table = compare_coverage(
            nets,
            {"generated": np.zeros((2, 2)), "random": np.zeros((0, 2))},
            [0.0, 1.0],
        )
        assert table["generated"][0.0] == [0.625, 0.625]
        assert table["generated"][1.0] == [0.125, 0.125]
        assert table["random"][0.0] == [0.0, 0.0]

    def test_coverage_falls_with_threshold(self):
        """Every source covers no more neurons at a higher threshold."""
        nets = [conv_net(seed=1, model_id="c1"), conv_net(seed=2, model_id="c2")]
        images = random_images(20, seed=5)
        labels = [int(np.argmax(forward(nets[0], x).final_probs)) for x in images]
        cfg = GenerationConfig(step_size=5.0, max_iters_per_seed=20, max_cycles=1)
        records = generate(nets, Dataset(images, labels), cfg).records
        sources = {
            "random": images,
            "fgsm": fgsm(nets[0], images, labels, 0.3),
            "generated": np.array([r.input for r in records]).reshape((-1, 1, 6, 6)),
        }
        for scale in (False, True):
            table = compare_coverage(nets, sources, THRESHOLDS, scale)
            for by_threshold in table.values():
                for low, high in zip(THRESHOLDS, THRESHOLDS[1:]):
                    assert all(a >= b for a, b in zip(by_threshold[low], by_threshold[high]))

    def test_generated_inputs_beat_random_selection(self):
        """At t = 0.25 generated inputs cover more than as many held-out inputs."""
        nets = [axis_net(0, "A"), axis_net(1, "B")]
        cfg = GenerationConfig(
            step_size=10.0, max_iters_per_seed=5, max_cycles=1, threshold=0.25
        )
        records = generate(nets, low_corner_seeds(20, seed=1), cfg).records
        assert len(records) == 20
        heldout = random_selection(low_corner_seeds(50, seed=2), 20, np.random.default_rng(0))
        table = compare_coverage(
            nets,
            {"generated": np.array([r.input for r in records]), "random": heldout.inputs},
            [0.25],
        )
        assert table["random"][0.25] == [2 / 6, 2 / 6]
        for generated, random in zip(table["generated"][0.25], table["random"][0.25]):
            assert generated > random
