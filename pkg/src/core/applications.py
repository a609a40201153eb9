"""Uses of generated tests: labelling, retraining, pollution detection, diversity."""

from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.metrics import pairwise_distances, precision_score, recall_score

from src.core.baselines import FGSM, random_selection
from src.core.generator import DifferenceRecord, generate
from src.core.trainer import TrainingError, fit
from src.nn.dataset import Dataset
from src.nn.layers import NetworkError
from src.nn.network import Network, accuracy, predict
from src.utils.config import GenerationConfig, TrainConfig
from src.utils.logger import get_logger

logger = get_logger(__name__)

ExtraSamples = Union[Dataset, Sequence[Tuple[np.ndarray, int]]]


class ApplicationError(Exception):
    """Raised when an application step cannot run on its inputs."""
    pass


def majority_label(nets: Sequence[Network], x: Any) -> int:
    """
    Class predicted by most networks.

    Ties go to the class with the highest summed confidence, then to the
    lowest class index.

    Raises:
        ApplicationError: If fewer than two networks are given
    """
    if len(nets) < 2:
        raise ApplicationError(f"Majority vote needs at least two networks, got {len(nets)}")
    votes: Counter = Counter()
    confidence: Dict[int, float] = {}
    for net in nets:
        label, probs = predict(net, x)
        votes[label] += 1
        confidence[label] = confidence.get(label, 0.0) + float(probs[label])
    return min(votes, key=lambda c: (-votes[c], -confidence[c], c))


def label_inputs(nets: Sequence[Network], inputs: Sequence[np.ndarray]) -> Dataset:
    """Inputs labelled by majority vote."""
    if len(inputs) == 0:
        raise ApplicationError("No inputs to label")
    stacked = np.stack([np.asarray(x, dtype=np.float64) for x in inputs])
    labels = [majority_label(nets, x) for x in stacked]
    return Dataset(stacked, np.asarray(labels))


def label_records(nets: Sequence[Network], records: Sequence[DifferenceRecord]) -> Dataset:
    """Generated inputs labelled by majority vote."""
    return label_inputs(nets, [r.input for r in records])


@dataclass
class RetrainReport:
    """Accuracies before and after retraining on augmented data."""

    network: Network
    extra_before: float
    extra_after: float
    heldout_before: Optional[float] = None
    heldout_after: Optional[float] = None
    extra_count: int = 0
    epochs: int = 0

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary (without the network)."""
        return {
            "model_id": self.network.model_id,
            "extra_count": self.extra_count,
            "epochs": self.epochs,
            "extra_accuracy_before": self.extra_before,
            "extra_accuracy_after": self.extra_after,
            "heldout_accuracy_before": self.heldout_before,
            "heldout_accuracy_after": self.heldout_after,
        }


def _as_dataset(extra: ExtraSamples) -> Dataset:
    if isinstance(extra, Dataset):
        return extra
    items = list(extra)
    if not items:
        raise ApplicationError("No extra samples given")
    inputs = np.stack([np.asarray(x, dtype=np.float64) for x, _ in items])
    return Dataset(inputs, np.asarray([int(label) for _, label in items]))


def augment_retrain(
    net: Network,
    cfg: TrainConfig,
    trainset: Dataset,
    extra: ExtraSamples,
    epochs: int,
    heldout: Optional[Dataset] = None,
) -> RetrainReport:
    """
    Continue training a network on its training set plus extra samples.

    Args:
        net: Trained network; training resumes from its weights
        cfg: Supplies batch size, learning rate and rng seed
        trainset: Original training data
        extra: Additional (input, class) samples, e.g. majority-labelled
            difference inputs
        epochs: Extra epochs; 0 leaves the network unchanged
        heldout: Optional held-out set for before/after accuracy

    Returns:
        Retrained network with before/after accuracies

    Raises:
        ApplicationError: If ``extra`` is empty or has out-of-range labels
    """
    try:
        extra_set = _as_dataset(extra)
        if len(extra_set) == 0:
            raise ApplicationError("No extra samples given")
        extra_set.check_labels(net.num_classes)
        combined = Dataset.concat(trainset, extra_set)
    except NetworkError as e:
        raise ApplicationError(str(e)) from e

    extra_before = accuracy(net, extra_set.inputs, extra_set.labels)
    heldout_before = accuracy(net, heldout.inputs, heldout.labels) if heldout else None

    try:
        retrained, _ = fit(
            net,
            combined,
            epochs,
            cfg.batch_size,
            cfg.learning_rate,
            np.random.default_rng(cfg.rng_seed),
        )
    except TrainingError as e:
        raise ApplicationError(str(e)) from e

    report = RetrainReport(
        network=retrained,
        extra_before=extra_before,
        extra_after=accuracy(retrained, extra_set.inputs, extra_set.labels),
        heldout_before=heldout_before,
        heldout_after=(
            accuracy(retrained, heldout.inputs, heldout.labels) if heldout else None
        ),
        extra_count=len(extra_set),
        epochs=epochs,
    )
    logger.info(
        f"Retrained '{net.model_id}' on {len(extra_set)} extra samples: extra accuracy "
        f"{report.extra_before:.4f} -> {report.extra_after:.4f}"
    )
    return report


RETRAIN_SOURCES = ("generated", "random", "adversarial")


@dataclass
class RetrainComparison:
    """Retraining outcomes per source of extra samples, scored on one difference pool."""

    reports: Dict[str, RetrainReport]
    pool_before: float
    pool_after: Dict[str, float]

    def gain(self, source: str) -> float:
        """Accuracy change on the difference pool after retraining with ``source``."""
        return self.pool_after[source] - self.pool_before

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            "pool_accuracy_before": self.pool_before,
            "sources": {
                source: {**report.to_dict(), "pool_accuracy_after": self.pool_after[source]}
                for source, report in self.reports.items()
            },
        }


def compare_retraining(
    net: Network,
    cfg: TrainConfig,
    trainset: Dataset,
    generated: Dataset,
    candidates: Dataset,
    epochs: int,
    epsilon: float = 0.3,
    heldout: Optional[Dataset] = None,
) -> RetrainComparison:
    """
    Retrain one network three ways with equally many extra samples.

    The extras are the majority-labelled generated inputs, randomly drawn
    ``candidates`` with their own labels, and FGSM perturbations of those
    same draws against ``net``. Every retrained copy is scored on the
    generated inputs.

    Args:
        net: Trained network; each retraining starts from its weights
        cfg: Supplies batch size, learning rate and rng seed
        trainset: Original training data
        generated: Majority-labelled difference-inducing inputs
        candidates: Labelled inputs the random and adversarial extras are drawn from
        epochs: Extra epochs per retraining
        epsilon: FGSM step
        heldout: Optional held-out set for before/after accuracy

    Raises:
        ApplicationError: If there are no generated inputs or candidates
    """
    if len(generated) == 0:
        raise ApplicationError("No generated inputs to compare against")
    count = min(len(generated), len(candidates))
    if count == 0:
        raise ApplicationError("No candidate inputs for the random and adversarial extras")

    picked = random_selection(candidates, count, np.random.default_rng(cfg.rng_seed))
    try:
        attacked = FGSM(net, epsilon).attack(picked.inputs, picked.labels)
    except ValueError as e:
        raise ApplicationError(str(e)) from e
    extras = {
        "generated": generated.take(count),
        "random": picked,
        "adversarial": Dataset(attacked, picked.labels),
    }

    reports: Dict[str, RetrainReport] = {}
    pool_after: Dict[str, float] = {}
    for source in RETRAIN_SOURCES:
        report = augment_retrain(net, cfg, trainset, extras[source], epochs, heldout)
        reports[source] = report
        pool_after[source] = accuracy(report.network, generated.inputs, generated.labels)
        logger.info(f"Retraining with {source} extras: pool accuracy {pool_after[source]:.4f}")
    return RetrainComparison(
        reports=reports,
        pool_before=accuracy(net, generated.inputs, generated.labels),
        pool_after=pool_after,
    )


def pollute_labels(
    dataset: Dataset,
    source: int,
    target: int,
    fraction: float,
    rng: np.random.Generator,
) -> Tuple[Dataset, np.ndarray]:
    """
    Relabel a fraction of the ``source`` samples as ``target``.

    Returns:
        Tuple of (polluted dataset, boolean flag per sample marking the
        relabelled ones)
    """
    if not 0.0 <= fraction <= 1.0:
        raise ApplicationError(f"Pollution fraction must be in [0, 1], got {fraction}")
    candidates = np.flatnonzero(dataset.labels == source)
    count = int(round(fraction * len(candidates)))
    chosen = rng.choice(candidates, size=count, replace=False) if count else []
    flags = np.zeros(len(dataset), dtype=bool)
    flags[chosen] = True
    labels = np.array(dataset.labels)
    labels[flags] = target
    logger.info(f"Relabelled {count} of {len(candidates)} class-{source} samples as {target}")
    return dataset.with_labels(labels), flags


@dataclass
class PollutionReport:
    """Training samples suspected of carrying polluted labels."""

    suspects: List[int] = field(default_factory=list)
    distances: List[float] = field(default_factory=list)
    records_used: int = 0
    no_differences: bool = False
    precision: Optional[float] = None
    recall: Optional[float] = None
    base_rate: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            "suspects": list(self.suspects),
            "distances": list(self.distances),
            "records_used": self.records_used,
            "no_differences": self.no_differences,
            "precision": self.precision,
            "recall": self.recall,
            "base_rate": self.base_rate,
        }


def _same_function(a: Network, b: Network) -> bool:
    return a.layers == b.layers and a.with_params(b.params, a.model_id) == a


def detect_pollution(
    clean: Network,
    polluted: Network,
    trainset: Dataset,
    gen_cfg: GenerationConfig,
    seeds: Dataset,
    flags: Optional[np.ndarray] = None,
    source: Optional[int] = None,
    target: Optional[int] = None,
    neighbors: int = 1,
    threads: int = 1,
) -> PollutionReport:
    """
    Trace clean/polluted disagreements back to their nearest training samples.

    Args:
        clean: Model trained on clean labels
        polluted: Model trained on the suspect labels
        trainset: The suspect training set (polluted labels)
        gen_cfg: Generation configuration for the two-model run
        seeds: Seed inputs for generation
        flags: Optional ground-truth pollution flag per training sample
        source: Keep only records the clean model labels ``source``
        target: Keep only records the polluted model labels ``target``, and
            search only training samples labelled ``target``
        neighbors: Nearest training samples taken per record
        threads: Generation worker count

    Returns:
        Deduplicated suspect indices with their L1 distances
    """
    if clean.input_shape != polluted.input_shape or trainset.input_shape != clean.input_shape:
        raise ApplicationError("Models and training set must share the input space")
    if neighbors < 1:
        raise ApplicationError(f"neighbors must be >= 1, got {neighbors}")

    report = PollutionReport()
    if _same_function(clean, polluted):
        logger.warning("Clean and polluted models are identical; nothing to trace")
        report.no_differences = True
        return report

    records = generate([clean, polluted], seeds, gen_cfg, threads).records
    if source is not None:
        records = [r for r in records if r.labels[0] == source]
    if target is not None:
        records = [r for r in records if r.labels[1] == target]
    report.records_used = len(records)

    pool = np.arange(len(trainset))
    if target is not None:
        pool = np.flatnonzero(trainset.labels == target)
    if flags is not None and len(pool):
        report.base_rate = float(np.mean(np.asarray(flags, dtype=bool)[pool]))

    if not records or not len(pool):
        logger.warning("No difference-inducing inputs to trace back")
        report.no_differences = True
        return report

    generated = np.stack([r.input.ravel() for r in records])
    training = trainset.inputs[pool].reshape(len(pool), -1)
    distances = pairwise_distances(generated, training, metric="manhattan")

    nearest: Dict[int, float] = {}
    k = min(neighbors, len(pool))
    for row in distances:
        for column in np.argsort(row, kind="stable")[:k]:
            index = int(pool[column])
            nearest[index] = min(nearest.get(index, np.inf), float(row[column]))
    report.suspects = sorted(nearest)
    report.distances = [nearest[i] for i in report.suspects]

    if flags is not None:
        truth = np.asarray(flags, dtype=bool)
        predicted = np.zeros(len(trainset), dtype=bool)
        predicted[report.suspects] = True
        report.precision = float(precision_score(truth, predicted, zero_division=0))
        report.recall = float(recall_score(truth, predicted, zero_division=0))
        logger.info(
            f"Pollution detection: {len(report.suspects)} suspects, precision "
            f"{report.precision:.4f}, recall {report.recall:.4f}"
        )
    return report


def nearest_training_sample(trainset: Dataset, x: Any) -> Tuple[int, float]:
    """Index and L1 distance of the training sample closest to ``x``."""
    flat = np.asarray(x, dtype=np.float64).reshape(1, -1)
    training = trainset.inputs.reshape(len(trainset), -1)
    row = pairwise_distances(flat, training, metric="manhattan")[0]
    index = int(np.argmin(row))
    return index, float(row[index])


def diversity(records: Sequence[DifferenceRecord], seeds: Dataset) -> float:
    """
    Mean L1 distance between generated inputs and their seeds.

    Raises:
        ApplicationError: If there are no records
    """
    if not records:
        raise ApplicationError("Diversity of an empty record list is undefined")
    distances = [
        float(np.sum(np.abs(r.input - seeds.inputs[r.seed_index]))) for r in records
    ]
    return float(np.mean(distances))
