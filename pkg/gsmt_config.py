"""
Run configuration: YAML sections merged over defaults, ``--set`` overrides,
cross-field validation and a digest of the data- and model-shaping parts.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import yaml

from gsmt_corrector import CorrectorConfig
from gsmt_errors import ConfigError
from gsmt_eval import EvalConfig
from gsmt_graphs import GraphConfig
from gsmt_ingest import CleanConfig
from gsmt_model import ModelConfig, TrainConfig
from gsmt_synth import SynthConfig

logger = logging.getLogger("gsmt.config")


@dataclass
class IngestConfig:
    bbox: Tuple[float, float, float, float] = (2.9, 3.4, 101.4, 101.9)
    max_speed: float = 120.0
    min_fixes_per_bus: int = 10
    grid_step: float = 60.0  # seconds
    agg_window: float = 300.0  # seconds
    model_step: int = 5  # grid steps per model frame
    history_minutes: Optional[float] = None
    stride: int = 1  # grid steps between window starts
    split: Tuple[float, float, float] = (0.8, 0.1, 0.1)

    @property
    def model_step_seconds(self) -> float:
        return self.model_step * self.grid_step

    def clean_config(self) -> CleanConfig:
        return CleanConfig(tuple(self.bbox), self.max_speed, self.min_fixes_per_bus)

    def validate(self):
        if len(self.bbox) != 4:
            raise ConfigError(f"ingest.bbox needs 4 numbers (lat_min, lat_max, lon_min, lon_max), got {list(self.bbox)}")
        self.clean_config().validate()
        if self.grid_step <= 0:
            raise ConfigError(f"ingest.grid_step must be > 0, got {self.grid_step}")
        if self.model_step < 1 or self.stride < 1:
            raise ConfigError(f"ingest.model_step and ingest.stride must be >= 1, got {self.model_step}, {self.stride}")
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise ConfigError(f"ingest.split must be 3 non-negative ratios summing to 1, got {list(self.split)}")


SECTIONS = {
    "synth": SynthConfig,
    "ingest": IngestConfig,
    "graphs": GraphConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "corrector": CorrectorConfig,
    "eval": EvalConfig,
}

DIGEST_SECTIONS = ("ingest", "graphs", "model")


@dataclass
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    graphs: GraphConfig = field(default_factory=GraphConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    corrector: CorrectorConfig = field(default_factory=CorrectorConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def load(cls, path: Optional[Path] = None, overrides: Sequence[str] = ()) -> "RunConfig":
        """Read a YAML file (defaults when None), apply ``section.key=value`` overrides, validate"""
        data: Dict[str, Any] = {}
        if path is not None:
            path = Path(path)
            try:
                with open(path, "r") as f:
                    data = yaml.safe_load(f) or {}
            except OSError as e:
                raise ConfigError(f"cannot read config {path}: {e}") from None
            except yaml.YAMLError as e:
                raise ConfigError(f"config {path} is not valid YAML: {e}") from None
            if not isinstance(data, dict):
                raise ConfigError(f"config {path} must be a mapping of sections")
        for override in overrides:
            section, key, value = parse_override(override)
            data.setdefault(section, {})
            if not isinstance(data[section], dict):
                raise ConfigError(f"config section '{section}' must be a mapping")
            data[section][key] = value
        config = cls.from_dict(data)
        config.validate()
        return config

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        sections = {}
        for name, values in data.items():
            if name not in SECTIONS:
                raise ConfigError(f"unknown config section '{name}' (expected one of {', '.join(SECTIONS)})")
            if values is None:
                values = {}
            if not isinstance(values, dict):
                raise ConfigError(f"config section '{name}' must be a mapping")
            sections[name] = _build_section(name, values)
        return cls(**sections)

    def validate(self):
        """Check each section, then every constraint spanning sections"""
        for name in SECTIONS:
            getattr(self, name).validate()

        ing, mdl = self.ingest, self.model
        if ing.agg_window < ing.grid_step:
            raise ConfigError(f"ingest.agg_window ({ing.agg_window}) must be >= ingest.grid_step ({ing.grid_step})")
        if ing.history_minutes is not None and mdl.L_in * ing.model_step * ing.grid_step != ing.history_minutes * 60:
            raise ConfigError(
                f"model.L_in ({mdl.L_in}) * ingest.model_step ({ing.model_step}) * ingest.grid_step ({ing.grid_step})"
                f" != ingest.history_minutes ({ing.history_minutes}) * 60"
            )
        step_minutes = ing.model_step_seconds / 60.0
        for horizon in self.eval.horizons:
            steps = horizon / step_minutes
            if steps != int(steps) or steps > mdl.L_out:
                raise ConfigError(
                    f"eval.horizons entry {horizon} must be a multiple of the model step ({step_minutes} min)"
                    f" no longer than model.L_out ({mdl.L_out}) steps"
                )
        if self.synth.fix_interval > ing.agg_window:
            logger.warning(
                f"synth.fix_interval ({self.synth.fix_interval}) exceeds ingest.agg_window ({ing.agg_window}); many frames will be imputed"
            )

    def to_dict(self) -> Dict[str, Any]:
        return {name: _plain(asdict(getattr(self, name))) for name in SECTIONS}

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), default_flow_style=False, sort_keys=False)

    def digest(self) -> str:
        """sha256 over the ingest, graphs and model sections"""
        shaping = {name: self.to_dict()[name] for name in DIGEST_SECTIONS}
        return hashlib.sha256(json.dumps(shaping, sort_keys=True).encode("utf-8")).hexdigest()


def parse_override(text: str) -> Tuple[str, str, Any]:
    """``section.key=value`` with the value parsed as YAML"""
    target, sep, raw = text.partition("=")
    section, dot, key = target.strip().partition(".")
    if not sep or not dot or not section or not key:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as e:
        raise ConfigError(f"override {text!r} has an unparseable value: {e}") from None
    return section, key, value


def _build_section(name: str, values: Dict[str, Any]):
    cls = SECTIONS[name]
    known = {f.name: f for f in fields(cls)}
    merged = asdict(cls())
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key '{name}.{key}'")
        default = merged[key]
        if isinstance(default, bool) != isinstance(value, bool) and default is not None:
            raise ConfigError(f"config key '{name}.{key}' expects {type(default).__name__}, got {value!r}")
        if isinstance(default, (int, float)) and not isinstance(value, (int, float)):
            raise ConfigError(f"config key '{name}.{key}' expects a number, got {value!r}")
        if isinstance(default, int) and not isinstance(default, bool) and not isinstance(value, int):
            raise ConfigError(f"config key '{name}.{key}' expects an integer, got {value!r}")
        if isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        elif isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        merged[key] = value
    try:
        return cls(**merged)
    except TypeError as e:
        raise ConfigError(f"invalid config section '{name}': {e}") from None


def _plain(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, list):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def horizon_list(text: str) -> List[int]:
    """Parse ``15,25`` into [15, 25]"""
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"horizons must be comma-separated integers, got {text!r}") from None
