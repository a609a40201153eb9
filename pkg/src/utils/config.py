"""Configuration management for training and generation runs."""

import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Union

import numpy as np
from dotenv import load_dotenv
from dotenv.parser import parse_stream

from src.core.constraints import (
    ConstraintError,
    ConstraintSpec,
    SingleRect,
    Unconstrained,
    parse_constraint,
)
from src.utils.logger import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]


class ConfigError(Exception):
    """Raised when a config file or value is invalid."""
    pass


@dataclass
class TrainConfig:
    """Training run configuration."""

    architecture: str = "lenet1"
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 0.05
    rng_seed: int = 0
    sample_limit: Optional[int] = None
    num_classes: int = 10
    model_id: str = "model"

    def validate(self) -> None:
        """
        Raises:
            ConfigError: If a value is out of range
        """
        if self.epochs < 1:
            raise ConfigError(f"'epochs' must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"'batch_size' must be >= 1, got {self.batch_size}")
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ConfigError(f"'learning_rate' must be > 0, got {self.learning_rate}")
        if self.sample_limit is not None and self.sample_limit < 1:
            raise ConfigError(f"'sample_limit' must be >= 1, got {self.sample_limit}")
        if self.num_classes < 2:
            raise ConfigError(f"'num_classes' must be >= 2, got {self.num_classes}")

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        """Create from dictionary."""
        return cls(**{k: v for k, v in data.items() if k in cls.__annotations__})


@dataclass
class GenerationConfig:
    """Test generation configuration."""

    lambda1: float = 1.0
    lambda2: float = 0.1
    step_size: float = 10.0
    threshold: float = 0.0
    coverage_target: float = 1.0
    max_iters_per_seed: int = 1000
    max_cycles: int = 10
    constraint: ConstraintSpec = field(default_factory=Unconstrained)
    rng_seed: int = 0
    scale_outputs: bool = False
    exclude_dense: bool = False
    seed_limit: Optional[int] = None

    def validate(self) -> None:
        """
        Raises:
            ConfigError: If a value is out of range
        """
        for name in ("lambda1", "lambda2", "step_size", "threshold", "coverage_target"):
            value = getattr(self, name)
            if not math.isfinite(value) and not (name == "threshold" and value > 0):
                raise ConfigError(f"'{name}' must be finite, got {value}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("'lambda1' and 'lambda2' must be >= 0")
        if self.step_size <= 0:
            raise ConfigError(f"'step_size' must be > 0, got {self.step_size}")
        if not 0.0 <= self.coverage_target <= 1.0:
            raise ConfigError(
                f"'coverage_target' must be in [0, 1], got {self.coverage_target}"
            )
        if self.max_iters_per_seed < 1:
            raise ConfigError(
                f"'max_iters_per_seed' must be >= 1, got {self.max_iters_per_seed}"
            )
        if self.max_cycles < 1:
            raise ConfigError(f"'max_cycles' must be >= 1, got {self.max_cycles}")
        if self.seed_limit is not None and self.seed_limit < 1:
            raise ConfigError(f"'seed_limit' must be >= 1, got {self.seed_limit}")

    @property
    def include_dense(self) -> bool:
        return not self.exclude_dense

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data["constraint"] = self.constraint.describe()
        return data


@dataclass
class RuntimeSettings:
    """Process-wide settings taken from the environment."""

    log_level: str = "INFO"
    log_file: Optional[Path] = None
    threads: int = 1

    @classmethod
    def from_env(cls, dotenv_path: Optional[PathLike] = None) -> "RuntimeSettings":
        """
        Read ``NEURODIFF_*`` variables after loading a ``.env`` file if present.

        Raises:
            ConfigError: If NEURODIFF_THREADS is not a positive integer
        """
        load_dotenv(dotenv_path)
        log_file = os.getenv("NEURODIFF_LOG_FILE")
        threads_text = os.getenv("NEURODIFF_THREADS", "1")
        try:
            threads = int(threads_text)
        except ValueError as e:
            raise ConfigError(f"Invalid NEURODIFF_THREADS: '{threads_text}'") from e
        if threads < 1:
            raise ConfigError(f"NEURODIFF_THREADS must be >= 1, got {threads}")
        return cls(
            log_level=os.getenv("NEURODIFF_LOG_LEVEL", "INFO").upper(),
            log_file=Path(log_file) if log_file else None,
            threads=threads,
        )


def _as_int(value: str) -> int:
    return int(value)


def _as_float(value: str) -> float:
    return float(value)


def _as_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: '{value}'")


def _as_optional_int(value: str) -> Optional[int]:
    if value.strip().lower() in ("", "none"):
        return None
    return int(value)


def _as_str(value: str) -> str:
    if not value.strip():
        raise ValueError("empty value")
    return value.strip()


TRAIN_KEYS: Dict[str, Callable[[str], Any]] = {
    "architecture": _as_str,
    "epochs": _as_int,
    "batch_size": _as_int,
    "learning_rate": _as_float,
    "rng_seed": _as_int,
    "sample_limit": _as_optional_int,
    "num_classes": _as_int,
    "model_id": _as_str,
}
TRAIN_REQUIRED = ("architecture", "epochs", "batch_size", "learning_rate", "rng_seed")

GENERATION_KEYS: Dict[str, Callable[[str], Any]] = {
    "lambda1": _as_float,
    "lambda2": _as_float,
    "step_size": _as_float,
    "threshold": _as_float,
    "coverage_target": _as_float,
    "max_iters_per_seed": _as_int,
    "max_cycles": _as_int,
    "constraint": _as_str,
    "rng_seed": _as_int,
    "scale_outputs": _as_bool,
    "exclude_dense": _as_bool,
    "seed_limit": _as_optional_int,
    "random_rect_position": _as_bool,
    "additive_mask": _as_str,
}
GENERATION_ALIASES = {"step": "step_size", "max_iters": "max_iters_per_seed"}


class ConfigManager:
    """Reads and writes flat ``key = value`` config files."""

    def __init__(self, mask_loader: Optional[Callable[[Path], np.ndarray]] = None):
        """
        Initialize configuration manager.

        Args:
            mask_loader: Reads the ``additive_mask`` file of a generation config
        """
        self.mask_loader = mask_loader

    def read_file(self, path: PathLike) -> Dict[str, str]:
        """
        Parse a config file into raw string values.

        Raises:
            ConfigError: If the file is missing, a line cannot be parsed,
                a key has no value or a key appears twice
        """
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}")
        with path.open(encoding="utf-8") as stream:
            bindings = list(parse_stream(stream))
        raw: Dict[str, str] = {}
        for binding in bindings:
            line = binding.original.line
            if binding.error:
                text = binding.original.string.strip()
                raise ConfigError(
                    f"{path}:{line}: cannot parse {text!r} (expected 'key = value')"
                )
            if binding.key is None:
                continue
            key = binding.key.strip().lower()
            if binding.value is None:
                raise ConfigError(f"{path}:{line}: config key '{key}' has no value")
            if key in raw:
                raise ConfigError(f"{path}:{line}: duplicate config key '{key}'")
            raw[key] = binding.value.strip()
        logger.debug(f"Read {len(raw)} keys from {path}")
        return raw

    @staticmethod
    def _convert(
        raw: Dict[str, str], schema: Dict[str, Callable[[str], Any]]
    ) -> Dict[str, Any]:
        converted: Dict[str, Any] = {}
        for key, value in raw.items():
            if key not in schema:
                raise ConfigError(f"Unknown config key '{key}'")
            try:
                converted[key] = schema[key](value)
            except ValueError as e:
                raise ConfigError(f"Invalid value for '{key}': {value!r} ({e})") from e
        return converted

    def parse_train_config(self, raw: Dict[str, str]) -> TrainConfig:
        """
        Raises:
            ConfigError: On a missing, unknown or invalid key
        """
        for key in TRAIN_REQUIRED:
            if key not in raw:
                raise ConfigError(f"Missing config key '{key}'")
        config = TrainConfig.from_dict(self._convert(raw, TRAIN_KEYS))
        config.validate()
        return config

    def load_train_config(self, path: PathLike) -> TrainConfig:
        config = self.parse_train_config(self.read_file(path))
        logger.info(f"Loaded training config from {path}")
        return config

    def parse_generation_config(
        self, raw: Dict[str, str], base_dir: Optional[Path] = None
    ) -> GenerationConfig:
        """
        Raises:
            ConfigError: On an unknown or invalid key or constraint
        """
        renamed: Dict[str, str] = {}
        for key, value in raw.items():
            name = GENERATION_ALIASES.get(key, key)
            if name in renamed:
                raise ConfigError(f"Config key '{name}' given twice (directly or via an alias)")
            renamed[name] = value
        values = self._convert(renamed, GENERATION_KEYS)

        constraint_text = values.pop("constraint", "none")
        random_rect = values.pop("random_rect_position", False)
        mask_path = values.pop("additive_mask", None)
        mask = None
        if mask_path is not None:
            if self.mask_loader is None:
                raise ConfigError("'additive_mask' given but no mask reader configured")
            resolved = Path(mask_path)
            if base_dir is not None and not resolved.is_absolute():
                resolved = base_dir / resolved
            try:
                mask = self.mask_loader(resolved)
            except (OSError, ValueError) as e:
                raise ConfigError(f"Cannot read 'additive_mask' {resolved}: {e}") from e
        try:
            values["constraint"] = parse_constraint(constraint_text, mask, random_rect)
        except ConstraintError as e:
            raise ConfigError(f"Invalid value for 'constraint': {e}") from e

        config = GenerationConfig(**values)
        config.validate()
        return config

    def load_generation_config(self, path: PathLike) -> GenerationConfig:
        path = Path(path)
        config = self.parse_generation_config(self.read_file(path), path.parent)
        logger.info(f"Loaded generation config from {path}")
        return config

    def save_config(self, config: Union[TrainConfig, GenerationConfig], path: PathLike) -> None:
        """Write a config as ``key = value`` lines."""
        lines = []
        for key, value in config.to_dict().items():
            if value is None:
                value = "none"
            elif isinstance(value, bool):
                value = str(value).lower()
            lines.append(f"{key} = {value}")
        if isinstance(config, GenerationConfig) and isinstance(config.constraint, SingleRect):
            lines.append(f"random_rect_position = {str(config.constraint.random_position).lower()}")
        Path(path).write_text("\n".join(lines) + "\n")
        logger.info(f"Configuration saved to {path}")
