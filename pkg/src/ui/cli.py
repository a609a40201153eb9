"""Command-line interface for neurodiff experiments."""

import argparse
import logging
import shutil
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from src.core.applications import (
    ApplicationError,
    augment_retrain,
    compare_retraining,
    detect_pollution,
    diversity,
    label_inputs,
    pollute_labels,
)
from src.core.baselines import FGSM, compare_coverage, random_selection
from src.core.constraints import ConstraintError
from src.core.generator import GenerationError, generate, run_coverage_mode
from src.core.objectives import ObjectiveError
from src.core.trainer import TrainingError, train, train_with_history, variant_config
from src.formats.export import (
    ExportError,
    load_record_input,
    read_coverage_report,
    read_manifest,
    read_stats,
    read_vec,
    write_generation_output,
    write_json,
)
from src.formats.idx import (
    MNIST_FILES,
    IDXFormatError,
    load_mnist_dir,
    write_idx_images,
    write_idx_labels,
)
from src.formats.model_store import ModelFormatError, load_model, save_model
from src.nn.dataset import Dataset
from src.nn.layers import NetworkError
from src.nn.network import Network, accuracy
from src.utils.colors import Colors
from src.utils.config import ConfigError, ConfigManager, GenerationConfig, RuntimeSettings
from src.utils.logger import get_logger, setup_logger

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_NO_RESULTS = 1
EXIT_USAGE = 2
EXIT_IO = 3

USAGE_ERRORS = (
    ConfigError,
    GenerationError,
    ConstraintError,
    ObjectiveError,
    TrainingError,
    ApplicationError,
    NetworkError,
)
IO_ERRORS = (OSError, IDXFormatError, ModelFormatError, ExportError)


class UsageError(Exception):
    """Raised for invalid command-line arguments."""
    pass


def _parse_floats(text: str) -> List[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _parse_ints(text: str) -> List[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


class CLIInterface:
    """Parses arguments and runs one experiment command."""

    def __init__(self, settings: Optional[RuntimeSettings] = None):
        """
        Initialize CLI interface.

        Args:
            settings: Environment-derived defaults (log level, threads)
        """
        self.settings = settings or RuntimeSettings()
        self.config_manager = ConfigManager(mask_loader=read_vec)
        self.commands: Dict[str, Callable[[argparse.Namespace], int]] = {
            "train": self.cmd_train,
            "generate": self.cmd_generate,
            "report": self.cmd_report,
            "retrain": self.cmd_retrain,
            "retrain-compare": self.cmd_retrain_compare,
            "pollution": self.cmd_pollution,
            "pollute": self.cmd_pollute,
            "variants": self.cmd_variants,
            "coverage": self.cmd_coverage,
            "compare": self.cmd_compare,
        }

    def build_parser(self) -> argparse.ArgumentParser:
        common = argparse.ArgumentParser(add_help=False)
        common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ERROR")
        common.add_argument(
            "--threads", type=int, default=None, help="worker threads (1 = deterministic)"
        )

        parser = argparse.ArgumentParser(
            prog="neurodiff",
            description="Differential testing of small neural networks",
        )
        sub = parser.add_subparsers(dest="command", required=True)

        p = sub.add_parser("train", parents=[common], help="train a model")
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--data", required=True, type=Path, help="MNIST IDX directory")
        p.add_argument("--out", required=True, type=Path, help="model file to write")

        p = sub.add_parser("generate", parents=[common], help="generate difference inputs")
        p.add_argument("--models", required=True, nargs="+", type=Path)
        p.add_argument("--seeds", required=True, type=Path, help="MNIST IDX directory")
        p.add_argument("--split", default="test", choices=sorted(MNIST_FILES))
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)

        p = sub.add_parser("report", parents=[common], help="summarize a generate run")
        p.add_argument("--out", required=True, type=Path)

        p = sub.add_parser("retrain", parents=[common], help="retrain on generated inputs")
        p.add_argument("--model", required=True, type=Path)
        p.add_argument("--voters", required=True, nargs="+", type=Path)
        p.add_argument("--generated", required=True, type=Path)
        p.add_argument("--data", required=True, type=Path)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--epochs", type=int, default=5)
        p.add_argument("--limit", type=int, default=100)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--report", type=Path, default=None)

        p = sub.add_parser(
            "retrain-compare",
            parents=[common],
            help="retrain with generated, random and FGSM extras",
        )
        p.add_argument("--model", required=True, type=Path)
        p.add_argument("--voters", required=True, nargs="+", type=Path)
        p.add_argument("--generated", required=True, type=Path)
        p.add_argument("--data", required=True, type=Path)
        p.add_argument("--seeds", required=True, type=Path, help="random/FGSM source")
        p.add_argument("--split", default="test", choices=sorted(MNIST_FILES))
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--epochs", type=int, default=5)
        p.add_argument("--limit", type=int, default=100)
        p.add_argument("--epsilon", type=float, default=0.3)
        p.add_argument("--report", type=Path, default=None)

        p = sub.add_parser("pollution", parents=[common], help="trace polluted samples")
        p.add_argument("--clean", required=True, type=Path)
        p.add_argument("--polluted", required=True, type=Path)
        p.add_argument("--data", required=True, type=Path, help="polluted training set")
        p.add_argument("--seeds", required=True, type=Path)
        p.add_argument("--split", default="test", choices=sorted(MNIST_FILES))
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--flags", type=Path, default=None)
        p.add_argument("--source", type=int, default=None)
        p.add_argument("--target", type=int, default=None)
        p.add_argument("--neighbors", type=int, default=1)
        p.add_argument("--report", type=Path, default=None)

        p = sub.add_parser("pollute", parents=[common], help="write a polluted training set")
        p.add_argument("--data", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--source", type=int, default=9)
        p.add_argument("--target", type=int, default=1)
        p.add_argument("--fraction", type=float, default=0.3)
        p.add_argument("--seed", type=int, default=0)

        p = sub.add_parser("variants", parents=[common], help="train controlled variants")
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--data", required=True, type=Path)
        p.add_argument("--axis", required=True, choices=["samples", "units", "epochs"])
        p.add_argument("--deltas", required=True, type=_parse_ints)
        p.add_argument("--out", required=True, type=Path)

        p = sub.add_parser("coverage", parents=[common], help="time to reach coverage")
        p.add_argument("--models", required=True, nargs="+", type=Path)
        p.add_argument("--seeds", required=True, type=Path)
        p.add_argument("--split", default="test", choices=sorted(MNIST_FILES))
        p.add_argument("--config", required=True, type=Path)

        p = sub.add_parser("compare", parents=[common], help="coverage vs random and FGSM")
        p.add_argument("--models", required=True, nargs="+", type=Path)
        p.add_argument("--seeds", required=True, type=Path)
        p.add_argument("--split", default="test", choices=sorted(MNIST_FILES))
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--thresholds", type=_parse_floats, default=[0.0, 0.25, 0.5, 0.75])
        p.add_argument("--epsilon", type=float, default=0.3)
        return parser

    # Helpers

    def threads(self, args: argparse.Namespace) -> int:
        threads = args.threads if args.threads is not None else self.settings.threads
        if threads < 1:
            raise UsageError(f"--threads must be >= 1, got {threads}")
        return threads

    @staticmethod
    def load_models(paths: Sequence[Path], minimum: int = 2) -> List[Network]:
        if len(paths) < minimum:
            raise UsageError("need at least two models")
        return [load_model(path) for path in paths]

    def load_generation_config(self, path: Path) -> GenerationConfig:
        return self.config_manager.load_generation_config(path)

    @staticmethod
    def load_split(directory: Path, split: str) -> Dataset:
        if not directory.is_dir():
            raise FileNotFoundError(f"Data directory not found: {directory}")
        return load_mnist_dir(directory, split)

    @staticmethod
    def load_optional_split(directory: Path, split: str) -> Optional[Dataset]:
        try:
            return load_mnist_dir(directory, split)
        except FileNotFoundError:
            return None

    @staticmethod
    def load_generated(out_dir: Path, limit: int, shape: Sequence[int]) -> Optional[np.ndarray]:
        """Stacked inputs of the first ``limit`` records of a generate run, or None."""
        manifest = read_manifest(out_dir)[: max(limit, 0)]
        if not manifest:
            return None
        return np.stack([load_record_input(out_dir, entry, shape) for entry in manifest])

    @staticmethod
    def print_header(title: str) -> None:
        print(Colors.colorize("=" * 60, Colors.CYAN))
        print(Colors.bold(f"  {title}"))
        print(Colors.colorize("=" * 60, Colors.CYAN))

    # Commands

    def cmd_train(self, args: argparse.Namespace) -> int:
        cfg = self.config_manager.load_train_config(args.config)
        data = self.load_split(args.data, "train")
        heldout = self.load_optional_split(args.data, "test")

        net, history = train_with_history(cfg, data)
        save_model(net, args.out)

        trained_on = data.take(cfg.sample_limit)
        self.print_header(f"TRAINED {net.model_id}")
        print(f"Model file:        {args.out}")
        print(f"Final loss:        {history.final_loss:.6f}")
        print(f"Train accuracy:    {accuracy(net, trained_on.inputs, trained_on.labels):.4f}")
        if heldout is not None:
            print(f"Held-out accuracy: {accuracy(net, heldout.inputs, heldout.labels):.4f}")
        return EXIT_OK

    def cmd_generate(self, args: argparse.Namespace) -> int:
        if len(args.models) < 2:
            raise UsageError("need at least two models")
        cfg = self.load_generation_config(args.config)
        nets = self.load_models(args.models)
        seeds = self.load_split(args.seeds, args.split)

        result = generate(nets, seeds, cfg, self.threads(args))
        stats = result.stats.to_dict()
        if result.records:
            stats["diversity"] = diversity(result.records, seeds.take(cfg.seed_limit))
        stats["config"] = cfg.to_dict()
        write_generation_output(args.out, result.records, result.trackers, stats)

        self.print_header("GENERATION")
        print(f"Records:        {len(result.records)}")
        print(f"Seeds skipped:  {result.stats.seeds_skipped}")
        print(f"Timeouts:       {result.stats.timeouts}")
        for tracker in result.trackers:
            print(f"  {tracker.report_line()}")
        if not result.records:
            print(Colors.warning("No difference-inducing inputs found"))
            return EXIT_NO_RESULTS
        print(Colors.success(f"Output written to {args.out}"))
        return EXIT_OK

    def cmd_report(self, args: argparse.Namespace) -> int:
        rows = read_coverage_report(args.out)
        manifest = read_manifest(args.out)
        stats = read_stats(args.out)

        self.print_header("COVERAGE REPORT")
        for row in rows:
            print(
                f"{row['model_id']:<24} t={row['threshold']:g}  "
                f"{row['activated']}/{row['total']}  ncov={row['ncov']:.4f}"
            )
        print(f"\nRecords:   {len(manifest)}")
        deviants: Dict[str, int] = {}
        for entry in manifest:
            deviants[entry["deviant_model"]] = deviants.get(entry["deviant_model"], 0) + 1
        for model_id, count in sorted(deviants.items()):
            print(f"  deviant {model_id}: {count}")
        mean_iters = stats.get("mean_iterations_to_difference")
        if mean_iters is not None:
            print(f"Mean iterations to difference: {mean_iters:.1f}")
        if "diversity" in stats:
            print(f"Mean L1 diversity: {stats['diversity']:.4f}")
        return EXIT_OK if manifest else EXIT_NO_RESULTS

    def cmd_retrain(self, args: argparse.Namespace) -> int:
        cfg = self.config_manager.load_train_config(args.config)
        net = load_model(args.model)
        voters = self.load_models(args.voters)
        trainset = self.load_split(args.data, "train").take(cfg.sample_limit)
        heldout = self.load_optional_split(args.data, "test")

        inputs = self.load_generated(args.generated, args.limit, net.input_shape)
        if inputs is None:
            self.print_header("RETRAIN")
            print(Colors.warning("No generated inputs: model left unchanged"))
            if heldout is not None:
                unchanged = accuracy(net, heldout.inputs, heldout.labels)
                print(f"Held-out accuracy: {unchanged:.4f} -> {unchanged:.4f}")
            return EXIT_NO_RESULTS

        labelled = label_inputs(voters, inputs)

        report = augment_retrain(net, cfg, trainset, labelled, args.epochs, heldout)
        save_model(report.network, args.out)
        if args.report:
            write_json(args.report, report.to_dict())

        self.print_header("RETRAIN")
        print(f"Extra samples:   {report.extra_count} over {report.epochs} epochs")
        print(f"Extra accuracy:  {report.extra_before:.4f} -> {report.extra_after:.4f}")
        if report.heldout_before is not None:
            print(
                f"Held-out accuracy: {report.heldout_before:.4f} -> "
                f"{report.heldout_after:.4f}"
            )
        return EXIT_OK

    def cmd_retrain_compare(self, args: argparse.Namespace) -> int:
        cfg = self.config_manager.load_train_config(args.config)
        net = load_model(args.model)
        voters = self.load_models(args.voters)
        trainset = self.load_split(args.data, "train").take(cfg.sample_limit)
        heldout = self.load_optional_split(args.data, "test")
        candidates = self.load_split(args.seeds, args.split)

        inputs = self.load_generated(args.generated, args.limit, net.input_shape)
        if inputs is None:
            print(Colors.warning("No generated inputs to compare against"))
            return EXIT_NO_RESULTS

        comparison = compare_retraining(
            net,
            cfg,
            trainset,
            label_inputs(voters, inputs),
            candidates,
            args.epochs,
            args.epsilon,
            heldout,
        )
        if args.report:
            write_json(args.report, comparison.to_dict())

        self.print_header(f"RETRAINING SOURCES ({args.epochs} epochs)")
        print(f"Difference pool accuracy before: {comparison.pool_before:.4f}")
        for source, report in comparison.reports.items():
            line = (
                f"{source:<12} extras={report.extra_count:<5} "
                f"pool={comparison.pool_after[source]:.4f} ({comparison.gain(source):+.4f})"
            )
            if report.heldout_after is not None:
                line += f"  held-out={report.heldout_after:.4f}"
            print(line)
        return EXIT_OK

    def cmd_pollution(self, args: argparse.Namespace) -> int:
        cfg = self.load_generation_config(args.config)
        clean = load_model(args.clean)
        polluted = load_model(args.polluted)
        trainset = self.load_split(args.data, "train")
        seeds = self.load_split(args.seeds, args.split)
        flags = None
        if args.flags is not None:
            flags = read_vec(args.flags).astype(bool)
            if len(flags) != len(trainset):
                raise UsageError(
                    f"Flags file has {len(flags)} entries for {len(trainset)} samples"
                )

        report = detect_pollution(
            clean,
            polluted,
            trainset,
            cfg,
            seeds,
            flags=flags,
            source=args.source,
            target=args.target,
            neighbors=args.neighbors,
            threads=self.threads(args),
        )
        if args.report:
            write_json(args.report, report.to_dict())

        self.print_header("POLLUTION DETECTION")
        print(f"Records traced:  {report.records_used}")
        print(f"Suspects:        {len(report.suspects)}")
        if report.precision is not None:
            print(f"Precision:       {report.precision:.4f}")
            print(f"Recall:          {report.recall:.4f}")
        if report.base_rate is not None:
            print(f"Base rate:       {report.base_rate:.4f}")
        if report.no_differences:
            print(Colors.warning("No differences found between the two models"))
            return EXIT_NO_RESULTS
        return EXIT_OK

    def cmd_pollute(self, args: argparse.Namespace) -> int:
        data = self.load_split(args.data, "train")
        polluted, flags = pollute_labels(
            data, args.source, args.target, args.fraction, np.random.default_rng(args.seed)
        )
        args.out.mkdir(parents=True, exist_ok=True)
        images_name, labels_name = MNIST_FILES["train"]
        write_idx_images(args.out / images_name, polluted.inputs)
        write_idx_labels(args.out / labels_name, polluted.labels)
        (args.out / "pollution_flags.txt").write_text(
            "".join(f"{int(flag)}\n" for flag in flags)
        )
        for name in MNIST_FILES["test"]:
            for candidate in (args.data / name, args.data / f"{name}.gz"):
                if candidate.is_file():
                    shutil.copy(candidate, args.out / candidate.name)

        self.print_header("POLLUTE")
        print(f"Relabelled {int(flags.sum())} samples {args.source} -> {args.target}")
        print(f"Output written to {args.out}")
        return EXIT_OK

    def cmd_variants(self, args: argparse.Namespace) -> int:
        base = self.config_manager.load_train_config(args.config)
        data = self.load_split(args.data, "train")
        args.out.mkdir(parents=True, exist_ok=True)

        self.print_header(f"VARIANTS ({args.axis})")
        for delta in args.deltas:
            cfg = variant_config(base, len(data), args.axis, delta)
            net = train(cfg, data)
            path = args.out / f"{net.model_id}.model"
            save_model(net, path)
            print(f"delta={delta:<6} {path}")
        return EXIT_OK

    def cmd_coverage(self, args: argparse.Namespace) -> int:
        if len(args.models) < 2:
            raise UsageError("need at least two models")
        cfg = self.load_generation_config(args.config)
        nets = self.load_models(args.models)
        seeds = self.load_split(args.seeds, args.split)

        report = run_coverage_mode(nets, seeds, cfg, self.threads(args))
        self.print_header("COVERAGE RUN")
        print(f"Target:          {cfg.coverage_target:.4f}")
        print(f"Elapsed:         {report.elapsed_seconds:.2f}s")
        print(f"Seeds consumed:  {report.seeds_consumed}")
        for model_id, value in report.ncov.items():
            print(f"  {model_id}: ncov={value:.4f}")
        if not report.reached:
            print(Colors.warning("Target coverage not reached (partial report)"))
            return EXIT_NO_RESULTS
        return EXIT_OK

    def cmd_compare(self, args: argparse.Namespace) -> int:
        if len(args.models) < 2:
            raise UsageError("need at least two models")
        cfg = self.load_generation_config(args.config)
        nets = self.load_models(args.models)
        seeds = self.load_split(args.seeds, args.split).take(cfg.seed_limit)

        result = generate(nets, seeds, cfg, self.threads(args))
        if not result.records:
            print(Colors.warning("No difference-inducing inputs to compare"))
            return EXIT_NO_RESULTS

        count = len(result.records)
        rng = np.random.default_rng(cfg.rng_seed)
        random_pick = random_selection(seeds, min(count, len(seeds)), rng)
        adversarial = FGSM(nets[0], args.epsilon).attack(random_pick.inputs, random_pick.labels)
        inputs_by_method = {
            "generated": np.stack([r.input for r in result.records]),
            "random": random_pick.inputs,
            "fgsm": adversarial,
        }
        table = compare_coverage(
            nets, inputs_by_method, args.thresholds, cfg.scale_outputs, cfg.include_dense
        )
        write_json(
            args.out / "compare.json",
            {
                "inputs": count,
                "models": [net.model_id for net in nets],
                "coverage": {
                    method: {f"{t:g}": values for t, values in rows.items()}
                    for method, rows in table.items()
                },
            },
        )

        self.print_header(f"COVERAGE COMPARISON ({count} inputs per method)")
        for t in args.thresholds:
            cells = "  ".join(
                f"{method}=" + "/".join(f"{v:.4f}" for v in table[method][t])
                for method in inputs_by_method
            )
            print(f"t={t:<5g} {cells}")
        return EXIT_OK

    def run(self, argv: Optional[Sequence[str]] = None) -> int:
        """
        Parse arguments and run one command.

        Returns:
            Exit code: 0 results, 1 no results, 2 usage/config error, 3 I/O error
        """
        parser = self.build_parser()
        try:
            args = parser.parse_args(argv)
        except SystemExit as e:
            return int(e.code) if isinstance(e.code, int) else EXIT_USAGE

        level = (args.log_level or self.settings.log_level).upper()
        if not isinstance(logging.getLevelName(level), int):
            print(Colors.error(f"Error: unknown log level '{level}'"), file=sys.stderr)
            return EXIT_USAGE
        setup_logger(level=level, log_file=self.settings.log_file)

        try:
            return self.commands[args.command](args)
        except IO_ERRORS as e:
            logger.error(f"{args.command}: {e}")
            print(Colors.error(f"I/O error: {e}"), file=sys.stderr)
            return EXIT_IO
        except (UsageError,) + USAGE_ERRORS as e:
            logger.error(f"{args.command}: {e}")
            print(Colors.error(f"Error: {e}"), file=sys.stderr)
            return EXIT_USAGE
