"""
Run configuration.
One YAML file whose sections mirror the config dataclasses; an empty file
gives every default.
"""

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import Any, Dict, Optional

import yaml
from dotenv import load_dotenv

from src.candidates import DEFAULT_MODEL_ID, SamplingPlan
from src.errors import ConfigError, SubstitutionError
from src.llm_baselines import LLMClientConfig
from src.prompt_manager import PromptManager
from src.scorer import Backend, ScorerConfig, scorer_preset
from src.stats import DEFAULT_ALPHA, K_S_PRESETS
from src.train import TrainConfig


@dataclass(frozen=True)
class ModelConfig:
    model_id: str = DEFAULT_MODEL_ID
    device: str = "cpu"


@dataclass(frozen=True)
class StatConfig:
    k_s: int = K_S_PRESETS["deep"]
    alpha: float = DEFAULT_ALPHA
    min_alternatives: int = 2

    def __post_init__(self):
        if self.k_s < 2:
            raise ConfigError("stat.k_s must be >= 2")
        if not 0 < self.alpha < 1:
            raise ConfigError("stat.alpha must lie in (0, 1)")
        if self.min_alternatives < 1:
            raise ConfigError("stat.min_alternatives must be >= 1")


@dataclass(frozen=True)
class DataConfig:
    path: Optional[str] = None
    format: str = "SWS"
    heldout_path: Optional[str] = None
    heldout_size: int = 50

    def __post_init__(self):
        if self.format.upper() not in ("SWS", "LS07", "LS14", "XSUM"):
            raise ConfigError(f"unknown data.format {self.format!r}")
        if self.heldout_size < 0:
            raise ConfigError("data.heldout_size must be >= 0")


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    sampling: SamplingPlan = field(default_factory=SamplingPlan)
    train: TrainConfig = field(default_factory=TrainConfig)
    stat: StatConfig = field(default_factory=StatConfig)
    llm: LLMClientConfig = field(default_factory=LLMClientConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0
    out_dir: str = "runs"

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Fold one seed into every section that samples."""
        return replace(
            self,
            seed=seed,
            sampling=replace(self.sampling, rng_seed=seed),
            train=replace(self.train, rng_seed=seed),
        )

    def to_dict(self) -> Dict[str, Any]:
        return _plain(asdict(self))


SECTIONS = {
    "model": ModelConfig,
    "scorer": ScorerConfig,
    "sampling": SamplingPlan,
    "train": TrainConfig,
    "stat": StatConfig,
    "llm": LLMClientConfig,
    "data": DataConfig,
}
TOP_LEVEL = {"seed": int, "out_dir": str}


def _plain(value):
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _check_type(section: str, name: str, value, expected):
    if value is None:
        return
    if expected in (int,) and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{section}.{name} must be an integer, got {value!r}")
    if expected is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise ConfigError(f"{section}.{name} must be a number, got {value!r}")
    if expected is str and not isinstance(value, str):
        raise ConfigError(f"{section}.{name} must be a string, got {value!r}")


def _build_section(name: str, cls, raw: Any):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    raw = dict(raw)
    base = cls()
    if cls is ScorerConfig:
        preset = raw.pop("preset", None)
        if preset:
            base = scorer_preset(str(preset))
        if raw.get("prompt_template") == "default":
            raw["prompt_template"] = PromptManager().get_paraphrase_template()
        try:
            backend = Backend(raw.get("backend", base.backend))
        except ValueError as e:
            raise ConfigError(f"unknown scorer.backend {raw.get('backend')!r}") from e
        if backend is Backend.CAUSAL_LM_PROMPTED and not raw.get("prompt_template", base.prompt_template):
            raw["prompt_template"] = PromptManager().get_paraphrase_template()
    known = {f.name: f for f in fields(cls)}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown key {name}.{key}")
        default = getattr(base, key)
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{name}.{key} must be true or false")
        elif isinstance(default, int):
            _check_type(name, key, value, int)
        elif isinstance(default, float):
            _check_type(name, key, value, float)
        elif isinstance(default, (str, Enum)):
            _check_type(name, key, value, str)
    try:
        return replace(base, **raw)
    except (ValueError, TypeError, SubstitutionError) as e:
        raise ConfigError(f"invalid section {name!r}: {e}") from e


def parse_config(raw: Optional[Dict[str, Any]]) -> ExperimentConfig:
    """
    Validate a parsed YAML mapping into an ExperimentConfig.

    Raises:
        ConfigError: Unknown keys, wrong types or out-of-range values
    """
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("the config file must hold a mapping")
    for key in raw:
        if key not in SECTIONS and key not in TOP_LEVEL:
            raise ConfigError(f"unknown top-level key {key!r}")
    built = {name: _build_section(name, cls, raw.get(name)) for name, cls in SECTIONS.items()}
    for key, expected in TOP_LEVEL.items():
        if key in raw:
            _check_type("config", key, raw[key], expected)
            built[key] = raw[key]
    config = ExperimentConfig(**built)
    if "seed" in raw:
        config = config.with_seed(config.seed)
    return config


def load_config(path: str) -> ExperimentConfig:
    """
    Load a YAML (or JSON) config file; also loads a .env file for credentials.

    Raises:
        ConfigError: If the file is missing, unparseable or invalid
    """
    load_dotenv()
    if not path or not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    return parse_config(raw)


def config_hash(config: ExperimentConfig) -> str:
    """sha256 of the canonical JSON form of the resolved config."""
    canonical = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
