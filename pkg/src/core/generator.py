"""Difference-inducing test generation by joint gradient ascent.

Seeds the models agree on are pushed along the gradient of the joint
objective, under the configured domain constraint, until one model's
prediction departs from the others. The outer loop cycles over the seed set
until every model reaches the target neuron coverage or the cycle budget
runs out.
"""

import threading
import time
from collections import Counter
from concurrent.futures import Future, ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.constraints import (
    Window,
    apply,
    ascent_step,
    patch_region,
    seed_state_for,
)
from src.core.coverage import AllCoveredError, CoverageTracker, neuron_outputs
from src.core.objectives import JointConfig, ObjectiveError, check_compatible, joint_from_tapes
from src.nn.autodiff import Tape
from src.nn.dataset import Dataset
from src.nn.network import Network, predict
from src.nn.neurons import NeuronId
from src.utils.config import GenerationConfig
from src.utils.logger import get_logger

logger = get_logger(__name__)


class GenerationError(Exception):
    """Raised for incompatible models, empty seed sets and unusable configs."""
    pass


@dataclass
class ModelPrediction:
    """One model's verdict on a generated input."""

    model_id: str
    label: int
    confidence: float

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {"model_id": self.model_id, "class": self.label, "confidence": self.confidence}


@dataclass
class DifferenceRecord:
    """A generated input on which the models disagree."""

    seed_index: int
    input: np.ndarray
    predictions: List[ModelPrediction]
    iterations_used: int
    deviant_model: str
    constraint: str
    cycle: int = 0
    region: List[Window] = field(default_factory=list)

    @property
    def labels(self) -> List[int]:
        return [p.label for p in self.predictions]

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary (without the input tensor)."""
        return {
            "seed_index": self.seed_index,
            "cycle": self.cycle,
            "deviant_model": self.deviant_model,
            "predictions": [p.to_dict() for p in self.predictions],
            "iterations": self.iterations_used,
            "constraint": self.constraint,
        }


@dataclass
class SeedOutcome:
    """What happened to one seed in one cycle."""

    seed_index: int
    cycle: int
    iterations: int
    found: bool
    skipped: bool = False

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            "seed_index": self.seed_index,
            "cycle": self.cycle,
            "iterations": self.iterations,
            "found": self.found,
            "skipped": self.skipped,
        }


@dataclass
class GenerationStats:
    """Aggregate counters of a generation run."""

    seeds_processed: int = 0
    seeds_skipped: int = 0
    timeouts: int = 0
    records: int = 0
    cycles_completed: int = 0
    elapsed_seconds: float = 0.0
    first_difference_seconds: Optional[float] = None
    first_difference_iterations: Optional[int] = None
    coverage_reached: bool = False
    final_ncov: Dict[str, float] = field(default_factory=dict)
    seed_log: List[SeedOutcome] = field(default_factory=list)

    @property
    def mean_iterations_to_difference(self) -> Optional[float]:
        found = [o.iterations for o in self.seed_log if o.found]
        return float(np.mean(found)) if found else None

    @property
    def seeds_consumed(self) -> int:
        return self.seeds_processed + self.seeds_skipped

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            "seeds_processed": self.seeds_processed,
            "seeds_skipped": self.seeds_skipped,
            "timeouts": self.timeouts,
            "records": self.records,
            "cycles_completed": self.cycles_completed,
            "elapsed_seconds": self.elapsed_seconds,
            "first_difference_seconds": self.first_difference_seconds,
            "first_difference_iterations": self.first_difference_iterations,
            "mean_iterations_to_difference": self.mean_iterations_to_difference,
            "coverage_reached": self.coverage_reached,
            "final_ncov": dict(self.final_ncov),
            "seed_log": [o.to_dict() for o in self.seed_log],
        }


@dataclass
class GenerationResult:
    records: List[DifferenceRecord]
    trackers: List[CoverageTracker]
    stats: GenerationStats


@dataclass
class CoverageRunReport:
    """Time and seeds needed to reach a coverage target."""

    elapsed_seconds: float
    seeds_consumed: int
    reached: bool
    ncov: Dict[str, float]

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            "elapsed_seconds": self.elapsed_seconds,
            "seeds_consumed": self.seeds_consumed,
            "reached": self.reached,
            "ncov": dict(self.ncov),
        }


def deviant_index(labels: Sequence[int]) -> Optional[int]:
    """
    Index of the first label that differs from the most common one.

    Ties for most common go to the label seen first. Returns None when all
    labels agree.
    """
    if len(set(labels)) <= 1:
        return None
    counts = Counter(labels)
    majority = max(labels, key=lambda label: (counts[label], -labels.index(label)))
    for index, label in enumerate(labels):
        if label != majority:
            return index
    return None


def check_difference(nets: Sequence[Network], x: Any) -> Optional[int]:
    """Index of a network whose predicted class differs from another's, or None."""
    return deviant_index([predict(net, x)[0] for net in nets])


def _predictions(tapes: Sequence[Tape]) -> List[ModelPrediction]:
    out = []
    for tape in tapes:
        label = tape.trace.predicted_class
        out.append(
            ModelPrediction(tape.net.model_id, label, float(tape.trace.final_probs[label]))
        )
    return out


class TestGenerator:
    """Runs the seed cycling loop over a fixed set of models."""

    __test__ = False

    def __init__(self, nets: Sequence[Network], cfg: GenerationConfig):
        """
        Initialize the generator.

        Args:
            nets: Models under test (at least two, same input shape and classes)
            cfg: Generation configuration

        Raises:
            GenerationError: If the models are incompatible or have no
                coverable neurons
        """
        try:
            check_compatible(nets)
        except ObjectiveError as e:
            raise GenerationError(str(e)) from e
        self.nets = list(nets)
        self.cfg = cfg
        self.joint_cfg = JointConfig(cfg.lambda1, cfg.lambda2)
        self.trackers = [
            CoverageTracker.for_network(
                net, cfg.threshold, cfg.scale_outputs, cfg.include_dense
            )
            for net in self.nets
        ]
        for tracker in self.trackers:
            if tracker.total == 0:
                raise GenerationError(
                    f"Model '{tracker.model_id}' has no coverable neurons"
                )
        self._started = 0.0
        self._stats_lock = threading.Lock()

    def min_coverage(self) -> float:
        return min(tracker.ncov() for tracker in self.trackers)

    def coverage_reached(self) -> bool:
        return self.min_coverage() >= self.cfg.coverage_target

    def coverage_by_model(self) -> Dict[str, float]:
        """Coverage per model id; repeated ids get an index suffix."""
        result: Dict[str, float] = {}
        for index, tracker in enumerate(self.trackers):
            key = tracker.model_id
            if key in result:
                key = f"{key}#{index}"
            result[key] = tracker.ncov()
        return result

    def _update_coverage(self, tapes: Sequence[Tape]) -> None:
        for net, tape, tracker in zip(self.nets, tapes, self.trackers):
            tracker.update(net, tape.trace)

    def _select_target(self, tracker: CoverageTracker, rng: np.random.Generator) -> NeuronId:
        try:
            return tracker.select_inactive(rng)
        except AllCoveredError:
            return tracker.select_any(rng)

    def _target_activated(
        self, net: Network, tape: Tape, tracker: CoverageTracker, target: NeuronId
    ) -> bool:
        if tracker.is_active(target):
            return True
        values = neuron_outputs(net, tape.trace, tracker.scale_outputs, tracker.include_dense)
        return values.get(target, 0.0) > tracker.threshold

    def process_seed(
        self, seed_index: int, x_seed: np.ndarray, cycle: int
    ) -> Tuple[Optional[DifferenceRecord], SeedOutcome]:
        """
        Ascend from one seed until the models disagree or the budget runs out.

        Returns:
            Tuple of (record or None, outcome)
        """
        cfg = self.cfg
        rng = np.random.default_rng([cfg.rng_seed, cycle, seed_index])
        tapes = [Tape(net, x_seed) for net in self.nets]
        self._update_coverage(tapes)

        labels = [tape.trace.predicted_class for tape in tapes]
        if deviant_index(labels) is not None:
            logger.warning(
                f"Seed {seed_index}: models already disagree {labels}; skipped"
            )
            return None, SeedOutcome(seed_index, cycle, 0, False, skipped=True)

        c = labels[0]
        d = int(rng.integers(len(self.nets)))
        state = seed_state_for(x_seed)
        x = state.seed.copy()
        targets = [self._select_target(tracker, rng) for tracker in self.trackers]

        for iteration in range(1, cfg.max_iters_per_seed + 1):
            targets = [
                self._select_target(tracker, rng)
                if self._target_activated(net, tape, tracker, target)
                else target
                for net, tape, tracker, target in zip(self.nets, tapes, self.trackers, targets)
            ]
            combined, _, _ = joint_from_tapes(tapes, d, c, targets, self.joint_cfg)
            direction = apply(cfg.constraint, combined.gradient, x, rng, state)
            x = ascent_step(cfg.constraint, x, direction, cfg.step_size, state)
            tapes = [Tape(net, x) for net in self.nets]

            deviant = deviant_index([tape.trace.predicted_class for tape in tapes])
            if deviant is not None:
                self._update_coverage(tapes)
                record = DifferenceRecord(
                    seed_index=seed_index,
                    input=x,
                    predictions=_predictions(tapes),
                    iterations_used=iteration,
                    deviant_model=self.nets[deviant].model_id,
                    constraint=cfg.constraint.describe(),
                    cycle=cycle,
                    region=patch_region(state, cfg.constraint),
                )
                logger.info(
                    f"Seed {seed_index} (cycle {cycle}): difference after {iteration} "
                    f"iterations, deviant '{record.deviant_model}'"
                )
                return record, SeedOutcome(seed_index, cycle, iteration, True)
            logger.debug(
                f"Seed {seed_index} iteration {iteration}: objective {combined.value:.6f}"
            )

        logger.info(
            f"Seed {seed_index} (cycle {cycle}): no difference within "
            f"{cfg.max_iters_per_seed} iterations"
        )
        return None, SeedOutcome(seed_index, cycle, cfg.max_iters_per_seed, False)

    def _account(
        self,
        stats: GenerationStats,
        records: List[DifferenceRecord],
        record: Optional[DifferenceRecord],
        outcome: SeedOutcome,
    ) -> None:
        with self._stats_lock:
            stats.seed_log.append(outcome)
            if outcome.skipped:
                stats.seeds_skipped += 1
                return
            stats.seeds_processed += 1
            if record is None:
                stats.timeouts += 1
                return
            records.append(record)
            stats.records += 1
            if stats.first_difference_seconds is None:
                stats.first_difference_seconds = time.perf_counter() - self._started
                stats.first_difference_iterations = outcome.iterations

    def _run_cycle_parallel(
        self,
        seeds: Dataset,
        cycle: int,
        threads: int,
        stats: GenerationStats,
        records: List[DifferenceRecord],
    ) -> bool:
        reached = False
        handled = set()
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures: Dict[Future, int] = {
                pool.submit(self.process_seed, index, seeds.inputs[index], cycle): index
                for index in range(len(seeds))
            }
            for future in as_completed(futures):
                handled.add(future)
                self._account(stats, records, *future.result())
                if self.coverage_reached():
                    reached = True
                    for pending in futures:
                        pending.cancel()
                    break
        for future in futures:
            if future not in handled and not future.cancelled():
                self._account(stats, records, *future.result())
        return reached

    def generate(self, seeds: Dataset, threads: int = 1) -> GenerationResult:
        """
        Run the generation loop over a seed set.

        Args:
            seeds: Seed inputs (labels are ignored)
            threads: Worker count; 1 is the deterministic reference

        Returns:
            Records, per-model coverage trackers and run statistics

        Raises:
            GenerationError: On an empty seed set or mismatched input shape
        """
        cfg = self.cfg
        seeds = seeds.take(cfg.seed_limit)
        if len(seeds) == 0:
            raise GenerationError("Seed set is empty")
        if seeds.input_shape != self.nets[0].input_shape:
            raise GenerationError(
                f"Seed shape {seeds.input_shape} does not match model input "
                f"{self.nets[0].input_shape}"
            )

        self._started = time.perf_counter()
        stats = GenerationStats()
        records: List[DifferenceRecord] = []
        reached = self.coverage_reached()

        cycle = 0
        while not reached and cycle < cfg.max_cycles:
            if threads > 1:
                reached = self._run_cycle_parallel(seeds, cycle, threads, stats, records)
            else:
                for index in range(len(seeds)):
                    self._account(
                        stats, records, *self.process_seed(index, seeds.inputs[index], cycle)
                    )
                    if self.coverage_reached():
                        reached = True
                        break
            cycle += 1
            stats.cycles_completed = cycle
            logger.info(
                f"Cycle {cycle}: {stats.records} records, "
                f"min coverage {self.min_coverage():.4f}"
            )

        records.sort(key=lambda r: (r.cycle, r.seed_index))
        stats.seed_log.sort(key=lambda o: (o.cycle, o.seed_index))
        stats.elapsed_seconds = time.perf_counter() - self._started
        stats.coverage_reached = reached
        stats.final_ncov = self.coverage_by_model()
        if reached:
            logger.info(f"Coverage target {cfg.coverage_target} reached")
        logger.info(
            f"Generation finished: {stats.records} records, {stats.timeouts} timeouts, "
            f"{stats.seeds_skipped} skipped seeds in {stats.elapsed_seconds:.2f}s"
        )
        return GenerationResult(records, self.trackers, stats)


def generate(
    nets: Sequence[Network], seeds: Dataset, cfg: GenerationConfig, threads: int = 1
) -> GenerationResult:
    """Generate difference-inducing inputs from a seed set."""
    return TestGenerator(nets, cfg).generate(seeds, threads)


def run_coverage_mode(
    nets: Sequence[Network], seeds: Dataset, cfg: GenerationConfig, threads: int = 1
) -> CoverageRunReport:
    """
    Measure time and seeds consumed until every model reaches the target coverage.

    The report is flagged as not reached when the cycle budget ran out first.
    """
    result = generate(nets, seeds, cfg, threads)
    stats = result.stats
    if not stats.coverage_reached:
        logger.warning(
            f"Coverage target {cfg.coverage_target} not reached within "
            f"{cfg.max_cycles} cycles"
        )
    return CoverageRunReport(
        elapsed_seconds=stats.elapsed_seconds,
        seeds_consumed=stats.seeds_consumed,
        reached=stats.coverage_reached,
        ncov=dict(stats.final_ncov),
    )
