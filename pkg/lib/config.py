"""
Scenario configuration - strict JSON schema via pydantic

Paths in a scenario file resolve relative to the file. Unknown keys are errors.
"""
import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .grid_model import DEFAULT_DATASET, DEFAULT_FEEDER
from .types import GainOverride as EngineGainOverride
from .types import GainSchedule, Hyperparams

logger = logging.getLogger(__name__)

DEFAULT_OUTPUT_DIR = 'results'


class StrictModel(BaseModel):
    model_config = ConfigDict(extra='forbid')


class GainOverride(StrictModel):
    alpha: Optional[float] = Field(default=None, gt=0)
    beta: Optional[float] = Field(default=None, gt=0)


class HyperConfig(StrictModel):
    alpha: Optional[float] = Field(default=None, gt=0)
    beta: Optional[float] = Field(default=None, gt=0)
    schedule: GainSchedule = GainSchedule.CONSTANT
    alpha_decay: float = Field(default=0.0, ge=0)
    beta_decay: float = Field(default=0.0, ge=0)
    per_k: Dict[int, GainOverride] = Field(default_factory=dict)
    per_agent: Dict[int, GainOverride] = Field(default_factory=dict)


class EventConfig(StrictModel):
    nodes: Tuple[int, int]
    start: int = Field(ge=1)
    end: int

    @model_validator(mode='after')
    def _check_window(self):
        if self.end <= self.start:
            raise ValueError(f"end ({self.end}) must be greater than start ({self.start})")
        return self


class ScenarioConfig(StrictModel):
    name: str = 'unnamed'
    feeder: str = str(DEFAULT_FEEDER)
    dataset: str = str(DEFAULT_DATASET)
    granularities: List[int] = Field(min_length=1)
    seed: int = Field(default=0, ge=0)
    epsilon: float = Field(gt=0)
    max_iterations: Dict[int, int]
    initial_lambda: float = 0.0
    hyper: HyperConfig = Field(default_factory=HyperConfig)
    schedule: List[EventConfig] = Field(default_factory=list)
    separate_scheduled_links: bool = True
    output_dir: Optional[str] = None
    trace_every: int = Field(default=1, ge=1)

    @field_validator('granularities')
    @classmethod
    def _check_granularities(cls, value: List[int]) -> List[int]:
        for k in value:
            if k < 1:
                raise ValueError(f"granularity must be >= 1 (got {k})")
        if len(set(value)) != len(value):
            raise ValueError("granularities must be distinct")
        return value

    @field_validator('max_iterations')
    @classmethod
    def _check_caps(cls, value: Dict[int, int]) -> Dict[int, int]:
        for k, cap in value.items():
            if cap < 1:
                raise ValueError(f"max_iterations[{k}] must be >= 1 (got {cap})")
        return value

    @model_validator(mode='after')
    def _check_cap_per_k(self):
        missing = [k for k in self.granularities if k not in self.max_iterations]
        if missing:
            raise ValueError(f"max_iterations has no entry for K={missing}")
        return self

    # =========================================================================
    # RESOLUTION
    # =========================================================================

    def hyperparams_for(self, k: int, alpha0: float, beta0: float) -> Hyperparams:
        """
        Gains for granularity K; alpha0/beta0 are the engine defaults for that K

        Precedence: per_k override, then the global value, then the default.
        """
        override = self.hyper.per_k.get(k, GainOverride())
        alpha = override.alpha or self.hyper.alpha or alpha0
        beta = override.beta or self.hyper.beta or beta0
        return Hyperparams(
            alpha0=alpha,
            beta0=beta,
            schedule=self.hyper.schedule,
            alpha_decay=self.hyper.alpha_decay,
            beta_decay=self.hyper.beta_decay,
            per_agent={
                agent_id: EngineGainOverride(alpha=gains.alpha, beta=gains.beta)
                for agent_id, gains in self.hyper.per_agent.items()
            },
        )

    def node_events(self) -> List[Tuple[Tuple[int, int], int, int]]:
        return [(tuple(event.nodes), event.start, event.end) for event in self.schedule]

    def separated_pairs(self) -> List[Tuple[int, int]]:
        """Scheduled node pairs the partitioner should keep in different clusters"""
        if not self.separate_scheduled_links:
            return []
        return [tuple(event.nodes) for event in self.schedule]

    def resolved_output_dir(self, override: Optional[str] = None) -> Path:
        return Path(
            override
            or self.output_dir
            or os.environ.get('GRIDSIM_OUTPUT_DIR')
            or DEFAULT_OUTPUT_DIR
        )


def _file_digest(path: str) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError:
        return path


def scenario_hash(config: ScenarioConfig) -> str:
    """
    SHA-256 of the canonical JSON (sorted keys, output_dir excluded), 16 hex digits

    Data files enter by content, so the hash does not depend on the checkout location.
    """
    payload = config.model_dump(mode='json', exclude={'output_dir'})
    payload['feeder'] = _file_digest(config.feeder)
    payload['dataset'] = _file_digest(config.dataset)
    canonical = json.dumps(payload, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:16]


def _format_validation_error(exc: ValidationError) -> str:
    problems = []
    for error in exc.errors():
        location = '.'.join(str(part) for part in error['loc']) or '<root>'
        problems.append(f"{location}: {error['msg']}")
    return "; ".join(problems)


def parse_scenario(text: str, base_dir: Optional[Path] = None, source: str = '<scenario>') -> ScenarioConfig:
    """Validate scenario JSON text; relative data paths resolve against base_dir"""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")

    try:
        config = ScenarioConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"{source}: {_format_validation_error(exc)}") from exc

    base = base_dir or Path.cwd()
    resolved = {}
    for key in ('feeder', 'dataset'):
        path = Path(getattr(config, key))
        if not path.is_absolute():
            path = (base / path).resolve()
        if not path.is_file():
            raise ConfigError(f"{source}: {key} file not found: {path}")
        resolved[key] = str(path)
    return config.model_copy(update=resolved)


def load_scenario(path) -> ScenarioConfig:
    """
    Load and validate a scenario file

    Raises ConfigError with line/column for JSON errors and field paths for
    schema violations.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    config = parse_scenario(text, base_dir=path.resolve().parent, source=str(path))
    logger.info(f"📄 Loaded scenario '{config.name}' ({scenario_hash(config)}) from {path}")
    return config
