"""
Run Configuration Module

Flat run configuration for the benchmark harness and a loader for plain
`key = value` config files. Every field can be set from a file; CLI flags
override file values.
"""

import logging
import typing
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from backend.agent import AgentConfig
from backend.energy import EnergyParams
from backend.per import PerConfig
from utils.constants import (
    ACTION_L2, BATCH_SIZE, BUFFER_EPISODES, ENV_NAMES, EPISODES_PER_EPOCH, EPOCHS, EVAL_EPISODES,
    GAMMA, GRAVITY, HER_RATIO, HIDDEN_SIZES, INERTIA, LR_ACTOR, LR_CRITIC, MASS,
    NOISE_SCALE, OPTIMIZATION_STEPS, OPTIMIZERS, PER_ALPHA, PER_EPSILON, POLYAK_TAU,
    RANDOM_EPS, SEEDS, STRATEGIES, STRATEGY_EBP, SUCCESS_THRESHOLD, TIMESTEP, WARMUP_EPISODES,
)
from utils.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    """
    Every hyperparameter of a training run.

    `e_tran_max` of None means the environment's own default clip threshold.
    """

    env: str = "PlanarPush"
    strategy: str = STRATEGY_EBP
    seeds: Tuple[int, ...] = SEEDS
    epochs: int = EPOCHS
    episodes_per_epoch: int = EPISODES_PER_EPOCH
    optimization_steps: int = OPTIMIZATION_STEPS
    batch_size: int = BATCH_SIZE
    eval_episodes: int = EVAL_EPISODES
    warmup_episodes: int = WARMUP_EPISODES
    success_threshold: float = SUCCESS_THRESHOLD

    # replay
    buffer_episodes: int = BUFFER_EPISODES
    her_ratio: float = HER_RATIO
    per_alpha: float = PER_ALPHA
    per_epsilon: float = PER_EPSILON

    # energy
    mass: float = MASS
    gravity: float = GRAVITY
    inertia: Tuple[float, ...] = INERTIA
    dt: float = TIMESTEP
    e_tran_max: Optional[float] = None

    # agent
    gamma: float = GAMMA
    tau: float = POLYAK_TAU
    lr_actor: float = LR_ACTOR
    lr_critic: float = LR_CRITIC
    noise_scale: float = NOISE_SCALE
    random_eps: float = RANDOM_EPS
    hidden_sizes: Tuple[int, ...] = HIDDEN_SIZES
    optimizer: str = "sgd"
    action_l2: float = ACTION_L2
    normalize_inputs: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """
        Raises:
            ConfigError: On any out-of-range or unknown value
        """
        if self.env not in ENV_NAMES:
            raise ConfigError(f"Unknown env '{self.env}', expected one of {ENV_NAMES}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"Unknown strategy '{self.strategy}', expected one of {STRATEGIES}")
        if len(self.seeds) < 1:
            raise ConfigError("At least one seed is required")
        for name in ("epochs", "episodes_per_epoch", "batch_size", "eval_episodes", "buffer_episodes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("optimization_steps", "warmup_episodes"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("her_ratio", "success_threshold", "random_eps"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {getattr(self, name)}")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must be in (0, 1], got {self.tau}")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must be in [0, 1), got {self.gamma}")
        if len(self.inertia) != 3:
            raise ConfigError(f"inertia needs 3 components, got {len(self.inertia)}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"Unknown optimizer '{self.optimizer}', expected one of {OPTIMIZERS}")
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.action_l2 < 0:
            raise ConfigError(f"action_l2 must be >= 0, got {self.action_l2}")

    def agent_config(self) -> AgentConfig:
        return AgentConfig(
            gamma=self.gamma, tau=self.tau, lr_actor=self.lr_actor, lr_critic=self.lr_critic,
            noise_scale=self.noise_scale, random_eps=self.random_eps,
            hidden_sizes=tuple(self.hidden_sizes), optimizer=self.optimizer,
            action_l2=self.action_l2, normalize_inputs=self.normalize_inputs,
        )

    def energy_params(self, default_e_tran_max: float) -> EnergyParams:
        try:
            return EnergyParams(
                mass=self.mass, gravity=self.gravity,
                inertia_x=self.inertia[0], inertia_y=self.inertia[1], inertia_z=self.inertia[2], dt=self.dt,
                e_tran_max=self.e_tran_max if self.e_tran_max is not None else default_e_tran_max,
            )
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def per_config(self) -> PerConfig:
        try:
            return PerConfig(alpha=self.per_alpha, epsilon=self.per_epsilon)
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _coerce(name: str, hint: Any, raw: str) -> Any:
    """Convert a raw config string to the annotated field type."""
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    text = raw.strip()

    if origin is Union:  # Optional[X]
        if text.lower() in ("none", ""):
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(name, inner, text)
    if origin in (tuple, Tuple):
        parts = [p for p in text.replace(",", " ").split() if p]
        return tuple(_coerce(name, args[0], p) for p in parts)
    if hint is bool:
        if text.lower() in ("true", "yes", "1"):
            return True
        if text.lower() in ("false", "no", "0"):
            return False
        raise ConfigError(f"Invalid boolean for {name}: '{raw}'")
    try:
        return hint(text)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid value for {name}: '{raw}' ({e})") from e


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, Any]:
    """
    Parse `key = value` lines into typed RunConfig overrides.

    Blank lines and `#` comments are ignored. Tuple fields accept
    comma- or space-separated values.

    Raises:
        ConfigError: On malformed lines, unknown or repeated keys
    """
    hints = typing.get_type_hints(RunConfig)
    known = {f.name for f in fields(RunConfig)}
    values: Dict[str, Any] = {}

    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got '{line}'")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'")
        values[key] = _coerce(key, hints[key], raw)
    return values


def load_run_config(path: Optional[Union[str, Path]] = None, **overrides: Any) -> RunConfig:
    """
    Build a RunConfig from defaults, an optional config file and overrides.

    Overrides with value None are ignored so argparse namespaces can be
    passed straight through.
    """
    values: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError as e:
            raise ConfigError(f"Config file not found: {path}") from e
        values.update(parse_config_text(text, source=str(path)))
        logger.info(f"✓ Loaded {len(values)} settings from {path}")

    known = {f.name for f in fields(RunConfig)}
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in known:
            raise ConfigError(f"Unknown setting '{key}'")
        values[key] = tuple(value) if isinstance(value, list) else value

    return RunConfig(**values)


def format_run_config(config: RunConfig) -> str:
    """Render a config in the same `key = value` format the loader reads."""
    lines = []
    for name, value in config.to_dict().items():
        if isinstance(value, (tuple, list)):
            value = ", ".join(str(v) for v in value)
        elif value is None:
            value = "none"
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"


def write_run_config(config: RunConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_run_config(config), encoding="utf-8")
    return path
