"""
Optimizer configuration: weight schedule, finite-difference steps,
line search, regularization and failure detection settings
"""

import logging
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from src.utils.errors import InputError, ParseError
from src.utils.helpers import format_float, parse_key_value_file

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WeightSchedule:
    """Ordered (iteration_count, w) segments"""

    segments: Tuple[Tuple[int, float], ...]

    def __post_init__(self):
        segments = tuple((int(count), float(w)) for count, w in self.segments)
        if not segments:
            raise InputError("weight schedule has no segments")
        for count, w in segments:
            if count <= 0:
                raise InputError(f"segment iteration count must be positive, got {count}")
            if not w > 0:
                raise InputError(f"segment weight must be positive, got {w}")
        object.__setattr__(self, "segments", segments)

    @property
    def total_iterations(self) -> int:
        return sum(count for count, _ in self.segments)

    def weight_at(self, iteration: int) -> float:
        """w for a 0-based iteration index"""
        if iteration < 0:
            raise InputError(f"negative iteration {iteration}")
        end = 0
        for count, w in self.segments:
            end += count
            if iteration < end:
                return w
        raise InputError(f"iteration {iteration} beyond schedule of {end}")

    @classmethod
    def parse(cls, text: str) -> "WeightSchedule":
        """Parse "20:20,30:1,10:0.02" (count:weight pairs)"""
        segments = []
        for part in text.split(','):
            part = part.strip()
            if not part:
                continue
            if ':' not in part:
                raise InputError(f"schedule segment {part!r} is not count:weight")
            count, w = part.split(':', 1)
            try:
                segments.append((int(count), float(w)))
            except ValueError:
                raise InputError(f"schedule segment {part!r} is not count:weight") from None
        return cls(tuple(segments))

    def format(self) -> str:
        return ",".join(f"{count}:{format_float(w)}" for count, w in self.segments)


@dataclass(frozen=True)
class OptimizerConfig:
    schedule: WeightSchedule
    fd_epsilon_rot: float = 1e-4
    fd_epsilon_trans: float = 1e-3
    fd_epsilon_delay: float = 1e-4
    initial_step: float = 1.0
    backtrack_factor: float = 0.5
    max_backtracks: int = 10
    # Step enlargements tried once the first trial step decreases the loss
    max_expansions: int = 5
    # Levenberg damping on the column-normalized Gauss-Newton system
    damping: float = 1e-3
    lambda1: float = 0.0
    lambda2: float = 0.0
    sample_rate: float = 0.02
    sample_seed: int = 0
    failure_loss_threshold: float = 50.0
    # Per-iteration caps on each parameter's update
    max_step_rot: float = 0.05
    max_step_trans: float = 0.1
    max_step_delay: float = 0.02
    convergence_tolerance: float = 1e-4
    min_excitation_speed: float = 0.1
    use_pixel_to_point: bool = True
    estimate_delay: bool = True
    workers: int = 1

    def __post_init__(self):
        for name in ("fd_epsilon_rot", "fd_epsilon_trans", "fd_epsilon_delay",
                     "initial_step", "max_step_rot", "max_step_trans", "max_step_delay"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 < self.backtrack_factor < 1:
            raise InputError(f"backtrack_factor must be in (0, 1), got {self.backtrack_factor}")
        if self.max_backtracks < 0:
            raise InputError(f"max_backtracks must be >= 0, got {self.max_backtracks}")
        if self.max_expansions < 0:
            raise InputError(f"max_expansions must be >= 0, got {self.max_expansions}")
        if not self.damping >= 0:
            raise InputError(f"damping must be non-negative, got {self.damping}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise InputError("regularization coefficients must be non-negative")
        if not 0 < self.sample_rate <= 1:
            raise InputError(f"sample_rate must be in (0, 1], got {self.sample_rate}")
        if not self.failure_loss_threshold > 0:
            raise InputError("failure_loss_threshold must be positive")
        if self.convergence_tolerance < 0 or self.min_excitation_speed < 0:
            raise InputError("tolerances must be non-negative")
        if self.workers < 1:
            raise InputError(f"workers must be >= 1, got {self.workers}")

    @property
    def total_iterations(self) -> int:
        return self.schedule.total_iterations

    def weight_at(self, iteration: int) -> float:
        return self.schedule.weight_at(iteration)

    def with_overrides(self, **changes) -> "OptimizerConfig":
        return replace(self, **changes)


def default_static_config() -> OptimizerConfig:
    """w = 20 for 20 iterations, then 1 for 30, then 0.02 for 10; 2% pixel sampling"""
    return OptimizerConfig(
        schedule=WeightSchedule(((20, 20.0), (30, 1.0), (10, 0.02))),
        sample_rate=0.02,
    )


def default_joint_config() -> OptimizerConfig:
    """
    Constant w = 5 for 20 iterations, lambda1 = 1e6, lambda2 = 1e9

    The failure threshold is scaled by w since the pixel-to-point term
    stays weighted in the final loss.
    """
    return OptimizerConfig(
        schedule=WeightSchedule(((20, 5.0),)),
        lambda1=1e6,
        lambda2=1e9,
        sample_rate=0.02,
        failure_loss_threshold=250.0,
    )


_BOOL_TEXT = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _convert(name: str, kind, text: str):
    if name == "schedule":
        return WeightSchedule.parse(text)
    if kind in (bool, "bool"):
        if text.lower() not in _BOOL_TEXT:
            raise ValueError(f"not a boolean: {text!r}")
        return _BOOL_TEXT[text.lower()]
    if kind in (int, "int"):
        return int(text)
    return float(text)


def load_optimizer_config(path, base: Optional[OptimizerConfig] = None) -> OptimizerConfig:
    """
    Read key=value overrides onto base (the static defaults when omitted)

    Keys mirror the OptimizerConfig fields; unknown keys are rejected.
    """
    base = base or default_static_config()
    entries = parse_key_value_file(path)
    kinds = {f.name: f.type for f in fields(OptimizerConfig)}
    changes: Dict[str, Any] = {}
    for key, (text, line) in entries.items():
        if key not in kinds:
            raise ParseError(path, f"unknown optimizer setting {key!r}", line)
        try:
            changes[key] = _convert(key, kinds[key], text)
        except (ValueError, InputError) as e:
            raise ParseError(path, f"invalid value for {key}: {e}", line) from None
    config = replace(base, **changes)
    logger.info(f"Loaded optimizer config from {path} ({len(changes)} overrides)")
    return config


def format_optimizer_config(config: OptimizerConfig) -> str:
    """Render a config in the key=value form load_optimizer_config reads"""
    lines = []
    for f in fields(OptimizerConfig):
        value = getattr(config, f.name)
        if isinstance(value, WeightSchedule):
            text = value.format()
        elif isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, int):
            text = str(value)
        else:
            text = format_float(value)
        lines.append(f"{f.name}={text}")
    return "\n".join(lines) + "\n"


def save_optimizer_config(config: OptimizerConfig, path) -> Path:
    path = Path(path)
    path.write_text(format_optimizer_config(config), encoding="utf-8")
    return path
