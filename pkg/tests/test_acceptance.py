"""End-to-end checks on real MNIST files.

Set NEURODIFF_MNIST_DIR to a directory holding the four IDX files to run them.
"""

import os

import numpy as np
import pytest

from src.core.constraints import Lighting
from src.core.coverage import CoverageTracker
from src.core.generator import generate
from src.core.trainer import make_variants, train
from src.formats.idx import load_mnist_dir
from src.nn.network import accuracy, predict
from src.utils.config import GenerationConfig, TrainConfig

MNIST_DIR = os.getenv("NEURODIFF_MNIST_DIR")

pytestmark = [
    pytest.mark.slow,
    pytest.mark.integration,
    pytest.mark.skipif(not MNIST_DIR, reason="NEURODIFF_MNIST_DIR not set"),
]


@pytest.fixture(scope="module")
def mnist():
    return load_mnist_dir(MNIST_DIR, "train"), load_mnist_dir(MNIST_DIR, "test")


@pytest.fixture(scope="module")
def models(mnist):
    trainset, _ = mnist
    nets = []
    for index, arch in enumerate(("lenet1", "lenet4", "lenet5")):
        cfg = TrainConfig(
            architecture=arch,
            epochs=1,
            batch_size=32,
            learning_rate=0.05,
            rng_seed=index,
            sample_limit=6000,
            model_id=arch,
        )
        nets.append(train(cfg, trainset))
    return nets


class TestMNIST:
    """Test generation against trained LeNet variants."""

    def test_models_learn(self, mnist, models):
        """Each model beats chance comfortably on held-out data."""
        _, testset = mnist
        sample = testset.take(1000)
        for net in models:
            assert accuracy(net, sample.inputs, sample.labels) > 0.8

    def test_generation_finds_differences(self, mnist, models):
        """Unconstrained and lighting runs find verified differences."""
        _, testset = mnist
        seeds = testset.take(20)
        for constraint in (None, Lighting()):
            cfg = GenerationConfig(max_iters_per_seed=100, max_cycles=1, seed_limit=20)
            if constraint is not None:
                cfg.constraint = constraint
            result = generate(models, seeds, cfg)
            assert result.records
            for record in result.records:
                labels = [predict(net, record.input)[0] for net in models]
                assert labels == record.labels
                assert np.all((record.input >= 0.0) & (record.input <= 1.0))

    def test_generation_adds_coverage(self, mnist, models):
        """Generated inputs cover at least what the seeds alone cover."""
        _, testset = mnist
        seeds = testset.take(10)
        result = generate(models, seeds, GenerationConfig(max_iters_per_seed=50, max_cycles=1))
        for net, tracker in zip(models, result.trackers):
            baseline = CoverageTracker.for_network(net, 0.0)
            baseline.update_batch(net, seeds.inputs)
            assert tracker.ncov() >= baseline.ncov()

    def test_epoch_variants(self, mnist):
        """Iterations to a difference fall as variants train longer; delta 0 never differs."""
        trainset, testset = mnist
        base = TrainConfig(
            architecture="lenet1",
            epochs=1,
            batch_size=32,
            learning_rate=0.05,
            sample_limit=2000,
            model_id="lenet1",
        )
        deltas = [0, 1, 2, 4, 8]
        nets = make_variants(base, trainset, "epochs", deltas)
        seeds = testset.take(20)
        cfg = GenerationConfig(max_iters_per_seed=200, max_cycles=1, lambda2=0.0)

        control = generate([nets[0], nets[0]], seeds, cfg)
        assert control.records == []
        assert control.stats.timeouts == control.stats.seeds_processed

        means = []
        for variant in nets[1:]:
            log = generate([nets[0], variant], seeds, cfg).stats.seed_log
            means.append(np.mean([o.iterations for o in log if not o.skipped]))
        inversions = sum(1 for a, b in zip(means, means[1:]) if b > a)
        assert inversions <= 1
