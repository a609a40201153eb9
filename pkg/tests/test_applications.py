"""Unit tests for labelling, retraining, pollution detection and diversity."""

from itertools import permutations

import numpy as np
import pytest

from src.core.applications import (
    RETRAIN_SOURCES,
    ApplicationError,
    augment_retrain,
    compare_retraining,
    detect_pollution,
    diversity,
    label_inputs,
    label_records,
    majority_label,
    nearest_training_sample,
    pollute_labels,
)
from src.core.generator import DifferenceRecord, ModelPrediction, generate
from src.nn.dataset import Dataset
from src.nn.network import predict
from src.utils.config import GenerationConfig, TrainConfig
from tests.helpers import linear_net, separable_toy


def constant_net(label, confidence, classes=10, model_id="const"):
    """Predicts ``label`` with probability ``confidence`` for every input."""
    probs = np.full(classes, (1.0 - confidence) / (classes - 1))
    probs[label] = confidence
    return linear_net(np.zeros((classes, 1)), np.log(probs), model_id=model_id)


def record_for(seed_index, x):
    return DifferenceRecord(
        seed_index=seed_index,
        input=np.asarray(x, dtype=np.float64),
        predictions=[ModelPrediction("a", 0, 0.9), ModelPrediction("b", 1, 0.8)],
        iterations_used=1,
        deviant_model="b",
        constraint="none",
    )


class TestMajorityLabel:
    """Test majority voting."""

    def setup_method(self):
        """Set up test fixtures."""
        self.x = np.array([0.5])

    def test_plain_majority(self):
        """Votes [4, 4, 9] give 4."""
        nets = [constant_net(4, 0.5), constant_net(4, 0.5), constant_net(9, 0.99)]
        assert majority_label(nets, self.x) == 4

    def test_tie_goes_to_confidence(self):
        """A 1-1 tie goes to the more confident model's class."""
        assert majority_label([constant_net(2, 0.9), constant_net(7, 0.6)], self.x) == 2
        assert majority_label([constant_net(2, 0.6), constant_net(7, 0.9)], self.x) == 7

    def test_full_tie_goes_to_lowest_class(self):
        """Equal votes and confidence give the lowest class."""
        assert majority_label([constant_net(8, 0.7), constant_net(3, 0.7)], self.x) == 3

    def test_permutation_invariant(self):
        """Reordering the networks does not change the vote."""
        nets = [constant_net(1, 0.4), constant_net(1, 0.5), constant_net(3, 0.9)]
        assert {majority_label(list(p), self.x) for p in permutations(nets)} == {1}

    def test_needs_two_networks(self):
        """A single network is not a vote."""
        with pytest.raises(ApplicationError, match="at least two"):
            majority_label([constant_net(0, 0.5)], self.x)

    def test_label_inputs(self):
        """Inputs are stacked with their majority labels."""
        nets = [constant_net(5, 0.8), constant_net(5, 0.6)]
        data = label_inputs(nets, [np.array([0.1]), np.array([0.9])])
        assert data.labels.tolist() == [5, 5]
        assert data.input_shape == (1,)
        with pytest.raises(ApplicationError, match="No inputs"):
            label_inputs(nets, [])


class TestAugmentRetrain:
    """Test retraining on extra samples."""

    def setup_method(self):
        """Set up test fixtures."""
        self.trainset = separable_toy(40, seed=3)
        self.extra = separable_toy(10, seed=5)
        self.heldout = separable_toy(20, seed=6)
        self.net = linear_net(np.zeros((2, 2)), [0.0, 0.0], model_id="zero")
        self.cfg = TrainConfig(batch_size=10, learning_rate=1.0, num_classes=2)

    def test_zero_epochs_changes_nothing(self):
        """With zero epochs accuracies stay put."""
        report = augment_retrain(
            self.net, self.cfg, self.trainset, self.extra, 0, self.heldout
        )
        assert report.network is self.net
        assert report.extra_after == report.extra_before == 0.5
        assert report.heldout_after == report.heldout_before
        assert report.to_dict()["extra_count"] == 10

    def test_retraining_improves_extra_accuracy(self):
        """Training on the augmented set fits the extra samples."""
        report = augment_retrain(self.net, self.cfg, self.trainset, self.extra, 50)
        assert report.extra_after > report.extra_before
        assert report.heldout_before is None
        assert report.network.model_id == "zero"

    def test_pairs_are_accepted(self):
        """Extra samples may be given as (input, class) pairs."""
        pairs = [(np.array([0.9, 0.9]), 1), (np.array([0.1, 0.1]), 0)]
        report = augment_retrain(self.net, self.cfg, self.trainset, pairs, 0)
        assert report.extra_count == 2
        assert report.extra_before == 0.5

    def test_bad_extras(self):
        """Empty extras and out-of-range labels are rejected."""
        with pytest.raises(ApplicationError, match="No extra samples"):
            augment_retrain(self.net, self.cfg, self.trainset, [], 1)
        with pytest.raises(ApplicationError, match="out of range"):
            augment_retrain(
                self.net, self.cfg, self.trainset, [(np.array([0.5, 0.5]), 4)], 1
            )


class TestCompareRetraining:
    """Test retraining with generated, random and adversarial extras."""

    def setup_method(self):
        """Set up test fixtures."""
        self.trainset = separable_toy(40, seed=3)
        self.generated = separable_toy(10, seed=5)
        self.candidates = separable_toy(30, seed=7)
        self.heldout = separable_toy(20, seed=6)
        self.net = linear_net(np.zeros((2, 2)), [0.0, 0.0], model_id="zero")
        self.cfg = TrainConfig(batch_size=10, learning_rate=1.0, num_classes=2)

    def test_sources_get_equal_extras(self):
        """Each source contributes as many extras as there are generated inputs."""
        comparison = compare_retraining(
            self.net,
            self.cfg,
            self.trainset,
            self.generated,
            self.candidates,
            epochs=0,
            epsilon=0.1,
            heldout=self.heldout,
        )
        assert tuple(comparison.reports) == RETRAIN_SOURCES
        assert all(r.extra_count == 10 for r in comparison.reports.values())
        assert comparison.pool_before == 0.5
        assert all(comparison.gain(source) == 0.0 for source in RETRAIN_SOURCES)
        data = comparison.to_dict()
        assert set(data["sources"]) == set(RETRAIN_SOURCES)
        assert data["sources"]["random"]["pool_accuracy_after"] == 0.5

    def test_fewer_candidates_cap_the_count(self):
        """The extra count is limited by the smaller of the two pools."""
        comparison = compare_retraining(
            self.net, self.cfg, self.trainset, self.generated, self.candidates.take(4), 0
        )
        assert all(r.extra_count == 4 for r in comparison.reports.values())

    def test_generated_extras_improve_pool_accuracy(self):
        """Retraining on the generated inputs fits the difference pool."""
        comparison = compare_retraining(
            self.net, self.cfg, self.trainset, self.generated, self.candidates, 50
        )
        assert comparison.gain("generated") > 0.0
        assert comparison.reports["adversarial"].heldout_after is None

    def test_empty_inputs(self):
        """Empty generated or candidate sets are rejected."""
        empty = Dataset(np.zeros((0, 2)), np.zeros(0, dtype=np.int64))
        with pytest.raises(ApplicationError, match="No generated inputs"):
            compare_retraining(self.net, self.cfg, self.trainset, empty, self.candidates, 1)
        with pytest.raises(ApplicationError, match="No candidate inputs"):
            compare_retraining(self.net, self.cfg, self.trainset, self.generated, empty, 1)



class TestRetrainOnDifferences:
    """Test retraining a deviant model on majority-labelled difference inputs."""

    def setup_method(self):
        """Set up test fixtures."""
        # v1 and v2 split on x1 > 0.5, the deviant on x0 > 0.5
        self.voters = [
            linear_net([[0.0, -2.0], [0.0, 2.0]], [1.0, -1.0], model_id="v1"),
            linear_net([[0.0, -2.0], [0.0, 2.0]], [1.0, -1.0], model_id="v2"),
            linear_net([[-2.0, 0.0], [2.0, 0.0]], [1.0, -1.0], model_id="deviant"),
        ]
        rng = np.random.default_rng(4)
        self.seeds = Dataset(rng.uniform(0.05, 0.2, size=(30, 2)), np.zeros(30))
        self.gen_cfg = GenerationConfig(
            step_size=10.0, max_iters_per_seed=5, max_cycles=1, lambda2=0.0
        )
        self.cfg = TrainConfig(batch_size=10, learning_rate=0.5, num_classes=2)

    def test_majority_labels_fix_the_deviant(self):
        """The deviant fits the difference pool again without losing held-out accuracy."""
        records = generate(self.voters, self.seeds, self.gen_cfg).records
        assert records
        assert {r.deviant_model for r in records} == {"deviant"}
        pool = label_records(self.voters, records)
        assert pool.labels.tolist() == [predict(self.voters[0], x)[0] for x in pool.inputs]

        report = augment_retrain(
            self.voters[2],
            self.cfg,
            separable_toy(40, seed=3),
            pool,
            300,
            separable_toy(20, seed=6),
        )
        assert report.extra_before == 0.0
        assert report.extra_after > report.extra_before
        assert report.heldout_before == 1.0
        assert report.heldout_after >= report.heldout_before - 0.005


class TestPollution:
    """Test label pollution and its detection."""

    def setup_method(self):
        """Set up test fixtures."""
        self.data = Dataset(np.linspace(0, 1, 12).reshape(6, 2), [0, 0, 0, 0, 1, 1])
        self.clean = linear_net([[1.0, 0.0], [-1.0, 0.0]], [-0.5, 0.5], model_id="clean")
        self.polluted = linear_net(
            [[0.0, 1.0], [0.0, -1.0]], [-0.5, 0.5], model_id="polluted"
        )
        self.gen_cfg = GenerationConfig(max_iters_per_seed=5, max_cycles=1)

    def test_pollute_labels(self):
        """Half of the class-0 samples are relabelled as 1."""
        polluted, flags = pollute_labels(self.data, 0, 1, 0.5, np.random.default_rng(0))
        assert flags.sum() == 2
        assert set(np.flatnonzero(flags)) <= {0, 1, 2, 3}
        assert np.all(polluted.labels[flags] == 1)
        np.testing.assert_array_equal(polluted.labels[~flags], self.data.labels[~flags])

    def test_pollute_nothing(self):
        """Fraction 0 leaves the labels unchanged."""
        polluted, flags = pollute_labels(self.data, 0, 1, 0.0, np.random.default_rng(0))
        assert not flags.any()
        np.testing.assert_array_equal(polluted.labels, self.data.labels)
        with pytest.raises(ApplicationError, match="fraction"):
            pollute_labels(self.data, 0, 1, 1.5, np.random.default_rng(0))

    def test_identical_models_have_no_suspects(self):
        """Identical clean and polluted models yield an empty suspect list."""
        seeds = Dataset(np.array([[0.2, 0.2]]), [0])
        report = detect_pollution(self.clean, self.clean, self.data, self.gen_cfg, seeds)
        assert report.suspects == []
        assert report.no_differences

    def test_traces_differences_to_training_samples(self):
        """Each difference input points at its nearest training sample."""
        trainset = Dataset(np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]), [0, 1, 0])
        seeds = Dataset(np.array([[0.2, 0.2]]), [0])
        flags = np.array([True, True, False])
        report = detect_pollution(
            self.clean, self.polluted, trainset, self.gen_cfg, seeds, flags=flags
        )
        assert report.records_used == 1
        assert len(report.suspects) == 1
        assert report.suspects[0] in (0, 1)
        assert report.distances == [0.0]
        assert report.precision == 1.0
        assert report.recall == 0.5
        assert report.base_rate == pytest.approx(2 / 3)
        assert report.precision > report.base_rate

    def test_invalid_arguments(self):
        """Mismatched input spaces and neighbor counts are rejected."""
        seeds = Dataset(np.array([[0.2, 0.2]]), [0])
        other = Dataset(np.zeros((2, 3)), [0, 1])
        with pytest.raises(ApplicationError, match="input space"):
            detect_pollution(self.clean, self.polluted, other, self.gen_cfg, seeds)
        with pytest.raises(ApplicationError, match="neighbors"):
            detect_pollution(
                self.clean, self.polluted, self.data, self.gen_cfg, seeds, neighbors=0
            )

    def test_nearest_training_sample(self):
        """A training sample is its own nearest neighbour."""
        assert nearest_training_sample(self.data, self.data.inputs[3]) == (3, 0.0)


class TestDiversity:
    """Test the L1 diversity measure."""

    def setup_method(self):
        """Set up test fixtures."""
        self.seeds = Dataset(np.array([[0.2, 0.2], [0.5, 0.5]]), [0, 1])

    def test_unchanged_inputs(self):
        """Records equal to their seeds have diversity 0."""
        assert diversity([record_for(0, [0.2, 0.2])], self.seeds) == 0.0

    def test_mean_distance(self):
        """Distances 0 and 1 average to 0.5."""
        records = [record_for(0, [0.2, 0.2]), record_for(1, [0.0, 0.0])]
        assert diversity(records, self.seeds) == pytest.approx(0.5)

    def test_empty(self):
        """Diversity of no records is undefined."""
        with pytest.raises(ApplicationError, match="empty"):
            diversity([], self.seeds)
