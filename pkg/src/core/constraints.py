"""Domain constraints: gradient transforms, clamping and feasibility checks.

Image inputs are (C, H, W) or (H, W) arrays in [0, 1]; windows and patches
span every leading (channel) axis. Discrete inputs are 0/1 feature vectors
that may only gain features.
"""

from dataclasses import dataclass, field
from typing import Any, List, Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.utils.logger import get_logger

logger = get_logger(__name__)

Window = Tuple[int, int, int, int]  # top, left, height, width

DEFAULT_PATCH_COUNT = 10


class ConstraintError(ValueError):
    """Raised for malformed constraint specs or incompatible shapes."""
    pass


@dataclass(frozen=True)
class Unconstrained:
    def describe(self) -> str:
        return "none"


@dataclass(frozen=True)
class Lighting:
    """Brighten or darken every pixel by the same amount."""

    def describe(self) -> str:
        return "lighting"


@dataclass(frozen=True)
class SingleRect:
    """Change only one m x n window per step."""

    m: int
    n: int
    random_position: bool = False

    def describe(self) -> str:
        return f"rect:{self.m}x{self.n}"


@dataclass(frozen=True)
class BlackPatches:
    """Darken up to ``count`` fixed m x m patches."""

    m: int
    count: int = DEFAULT_PATCH_COUNT

    def describe(self) -> str:
        return f"patches:{self.m}:{self.count}"


@dataclass(frozen=True, eq=False)
class DiscreteAdditive:
    """Binary features that may only flip from 0 to 1 where allowed."""

    allowed_mask: np.ndarray

    def __post_init__(self) -> None:
        mask = np.asarray(self.allowed_mask).astype(bool)
        mask.setflags(write=False)
        object.__setattr__(self, "allowed_mask", mask)

    def describe(self) -> str:
        return "additive"


ConstraintSpec = Union[Unconstrained, Lighting, SingleRect, BlackPatches, DiscreteAdditive]


@dataclass
class SeedState:
    """Per-seed bookkeeping; never shared between seeds or workers."""

    seed: np.ndarray
    patches: Optional[List[Tuple[int, int]]] = None
    windows: List[Window] = field(default_factory=list)
    offset: float = 0.0


def parse_constraint(
    text: str,
    additive_mask: Optional[np.ndarray] = None,
    random_rect_position: bool = False,
) -> ConstraintSpec:
    """
    Parse ``none | lighting | rect:MxN | patches:M:COUNT | additive``.

    Raises:
        ConstraintError: On unknown or malformed specs, or ``additive``
            without a mask
    """
    token = text.strip().lower()
    try:
        if token in ("", "none"):
            return Unconstrained()
        if token == "lighting":
            return Lighting()
        if token.startswith("rect:"):
            m, n = token[len("rect:"):].split("x")
            spec: ConstraintSpec = SingleRect(int(m), int(n), random_rect_position)
            if spec.m < 1 or spec.n < 1:
                raise ConstraintError(f"Rectangle must be at least 1x1: '{text}'")
            return spec
        if token.startswith("patches:"):
            parts = token[len("patches:"):].split(":")
            count = int(parts[1]) if len(parts) > 1 else DEFAULT_PATCH_COUNT
            patches = BlackPatches(int(parts[0]), count)
            if patches.m < 1 or patches.count < 1 or len(parts) > 2:
                raise ConstraintError(f"Invalid patch constraint: '{text}'")
            return patches
        if token == "additive":
            if additive_mask is None:
                raise ConstraintError("Constraint 'additive' needs an allowed-feature mask")
            return DiscreteAdditive(additive_mask)
    except ValueError as e:
        if isinstance(e, ConstraintError):
            raise
        raise ConstraintError(f"Malformed constraint: '{text}'") from e
    raise ConstraintError(f"Unknown constraint: '{text}'")


def _spatial(shape: Tuple[int, ...]) -> Tuple[int, int]:
    if len(shape) < 2:
        raise ConstraintError(f"Spatial constraint needs a 2-D input, got {shape}")
    return shape[-2], shape[-1]


def _check_fits(spec: ConstraintSpec, shape: Tuple[int, ...]) -> None:
    if isinstance(spec, SingleRect):
        h, w = _spatial(shape)
        if spec.m > h or spec.n > w:
            raise ConstraintError(f"Window {spec.m}x{spec.n} larger than input {h}x{w}")
    elif isinstance(spec, BlackPatches):
        h, w = _spatial(shape)
        if spec.m > h or spec.m > w:
            raise ConstraintError(f"Patch {spec.m}x{spec.m} larger than input {h}x{w}")
    elif isinstance(spec, DiscreteAdditive):
        if spec.allowed_mask.shape != shape:
            raise ConstraintError(
                f"Mask shape {spec.allowed_mask.shape} does not match input {shape}"
            )


def _best_window(g: np.ndarray, m: int, n: int) -> Tuple[int, int]:
    energy = np.abs(g).reshape((-1,) + g.shape[-2:]).sum(axis=0)
    sums = sliding_window_view(energy, (m, n)).sum(axis=(2, 3))
    # argmax returns the first row-major maximum
    i, j = np.unravel_index(int(np.argmax(sums)), sums.shape)
    return int(i), int(j)


def apply(
    spec: ConstraintSpec,
    grad: np.ndarray,
    x: np.ndarray,
    rng: np.random.Generator,
    state: SeedState,
) -> np.ndarray:
    """
    Transform a raw input gradient into an allowed update direction.

    Args:
        spec: Active constraint
        grad: Gradient of the objective at ``x``
        x: Current input
        rng: Random stream of the current seed
        state: Bookkeeping of the current seed (patch positions, windows)

    Returns:
        Constrained gradient with the input's shape

    Raises:
        ConstraintError: On shape mismatch or a window larger than the input
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != np.shape(x):
        raise ConstraintError(f"Gradient shape {grad.shape} does not match input {np.shape(x)}")
    _check_fits(spec, grad.shape)

    if isinstance(spec, Unconstrained):
        return grad.copy()

    if isinstance(spec, Lighting):
        return np.full(grad.shape, float(np.sign(np.mean(grad))))

    if isinstance(spec, SingleRect):
        h, w = _spatial(grad.shape)
        if spec.random_position:
            i = int(rng.integers(h - spec.m + 1))
            j = int(rng.integers(w - spec.n + 1))
        else:
            i, j = _best_window(grad, spec.m, spec.n)
        state.windows.append((i, j, spec.m, spec.n))
        out = np.zeros_like(grad)
        out[..., i:i + spec.m, j:j + spec.n] = grad[..., i:i + spec.m, j:j + spec.n]
        return out

    if isinstance(spec, BlackPatches):
        h, w = _spatial(grad.shape)
        if state.patches is None:
            state.patches = [
                (int(rng.integers(h - spec.m + 1)), int(rng.integers(w - spec.m + 1)))
                for _ in range(spec.count)
            ]
        out = np.zeros_like(grad)
        for i, j in state.patches:
            patch = grad[..., i:i + spec.m, j:j + spec.m]
            if np.mean(patch) > 0:
                out[..., i:i + spec.m, j:j + spec.m] = 0.0
            else:
                out[..., i:i + spec.m, j:j + spec.m] = patch
        return out

    if isinstance(spec, DiscreteAdditive):
        flip = (grad > 0) & spec.allowed_mask & (np.asarray(x) == 0)
        return flip.astype(np.float64)

    raise ConstraintError(f"Unknown constraint: {spec!r}")


def clamp(spec: ConstraintSpec, x: np.ndarray, state: Optional[SeedState] = None) -> np.ndarray:
    """
    Project an input back into its domain.

    Images are clipped to [0, 1]. Discrete features are snapped to {0, 1};
    with a seed state, allowed features never drop below the seed and
    disallowed features keep their seed value.
    """
    x = np.asarray(x, dtype=np.float64)
    if isinstance(spec, DiscreteAdditive):
        snapped = (x >= 0.5).astype(np.float64)
        if state is None:
            return snapped
        seed = state.seed
        return np.where(spec.allowed_mask, np.maximum(snapped, seed), seed)
    return np.clip(x, 0.0, 1.0)


def ascent_step(
    spec: ConstraintSpec,
    x: np.ndarray,
    constrained_grad: np.ndarray,
    step_size: float,
    state: SeedState,
) -> np.ndarray:
    """
    One ascent step x <- clamp(x + s * G').

    Lighting keeps a running offset from the seed so the change stays
    uniform across pixels. Discrete features flip directly; ``step_size``
    is ignored for them.
    """
    if isinstance(spec, Lighting):
        direction = float(constrained_grad.flat[0]) if constrained_grad.size else 0.0
        state.offset += step_size * direction
        return np.clip(state.seed + state.offset, 0.0, 1.0)
    if isinstance(spec, DiscreteAdditive):
        return clamp(spec, np.maximum(x, constrained_grad), state)
    return clamp(spec, x + step_size * constrained_grad, state)


def _inside(windows: List[Window], shape: Tuple[int, ...]) -> np.ndarray:
    mask = np.zeros(shape[-2:], dtype=bool)
    for i, j, m, n in windows:
        mask[i:i + m, j:j + n] = True
    return np.broadcast_to(mask, shape)


def satisfies_constraint(
    spec: ConstraintSpec,
    x_gen: np.ndarray,
    x_seed: np.ndarray,
    region: Optional[List[Window]] = None,
    tol: float = 1e-12,
) -> bool:
    """
    Check a generated input against its seed under a constraint.

    ``region`` lists the windows (SingleRect) or patches (BlackPatches,
    as (i, j, m, m)) the generator was allowed to touch.
    """
    x_gen = np.asarray(x_gen, dtype=np.float64)
    x_seed = np.asarray(x_seed, dtype=np.float64)
    if x_gen.shape != x_seed.shape:
        return False

    if isinstance(spec, DiscreteAdditive):
        binary = np.all((x_gen == 0.0) | (x_gen == 1.0))
        allowed = spec.allowed_mask
        return bool(
            binary
            and np.all(x_gen >= x_seed)
            and np.all(x_gen[~allowed] == x_seed[~allowed])
        )

    if np.any(x_gen < 0.0) or np.any(x_gen > 1.0):
        return False

    if isinstance(spec, Unconstrained):
        return True

    if isinstance(spec, Lighting):
        delta = x_gen - x_seed
        interior = (x_gen > 0.0) & (x_gen < 1.0)
        if not np.any(interior):
            return True
        offset = float(np.mean(delta[interior]))
        if np.max(np.abs(delta[interior] - offset)) > tol:
            return False
        # Clipped pixels must be where seed + offset left [0, 1]
        low = x_gen == 0.0
        high = x_gen == 1.0
        return bool(
            np.all(x_seed[low] + offset <= tol)
            and np.all(x_seed[high] + offset >= 1.0 - tol)
        )

    if isinstance(spec, (SingleRect, BlackPatches)):
        if region is None:
            return False
        changed = x_gen != x_seed
        return not bool(np.any(changed & ~_inside(region, x_gen.shape)))

    return False


def patch_region(state: SeedState, spec: ConstraintSpec) -> List[Window]:
    """Region a seed's updates were confined to, as windows."""
    if isinstance(spec, SingleRect):
        return list(state.windows)
    if isinstance(spec, BlackPatches) and state.patches is not None:
        return [(i, j, spec.m, spec.m) for i, j in state.patches]
    return []


def seed_state_for(x: Any) -> SeedState:
    return SeedState(np.array(x, dtype=np.float64, copy=True))
