# Configuration for concept-miner runs
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional

import yaml

from head import HeadTrainConfig
from mining import MergeConfig, MiningConfig
from occlusion import OcclusionConfig
from partproto import McmConfig
from utils import ValidationError, config_hash

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
LOG_LEVEL_ENV = "CONCEPT_MINER_LOG_LEVEL"


def configure_logging(level: Optional[str] = None):
    """Configure root logging; level from the flag, then the environment, then INFO"""
    name = (level or os.getenv(LOG_LEVEL_ENV) or "INFO").upper()
    numeric = getattr(logging, name, None)
    if not isinstance(numeric, int):
        raise ValidationError(f"unknown log level {name!r}")
    logging.basicConfig(level=numeric, format=LOG_FORMAT)
    logging.getLogger().setLevel(numeric)


# Dependencies check
def check_dependencies():
    """Check if all required packages are available"""
    required_packages = ['numpy', 'pandas', 'scipy', 'sklearn', 'yaml']
    missing_packages = []

    for package in required_packages:
        try:
            __import__(package)
        except ImportError:
            missing_packages.append(package)

    if missing_packages:
        logger.error("Missing required packages: %s", ", ".join(missing_packages))
        return False

    return True


@dataclass
class MetricsConfig:
    faithfulness_n: List[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    stability_folds: int = 10

    def validate(self):
        if any(n < 0 for n in self.faithfulness_n):
            raise ValidationError("faithfulness_n entries must be non-negative")
        if self.stability_folds == 1 or self.stability_folds < 0:
            raise ValidationError("stability_folds must be 0 (disabled) or >= 2")


SECTIONS = {
    "mcm": McmConfig,
    "mining": MiningConfig,
    "head": HeadTrainConfig,
    "merge": MergeConfig,
    "occlusion": OcclusionConfig,
    "metrics": MetricsConfig,
}


@dataclass
class PipelineConfig:
    seed: int = 0
    remine_interval: int = 5
    head_epochs: int = 30
    merge_enabled: bool = False
    mcm: McmConfig = field(default_factory=McmConfig)
    mining: MiningConfig = field(default_factory=MiningConfig)
    head: HeadTrainConfig = field(default_factory=HeadTrainConfig)
    merge: MergeConfig = field(default_factory=MergeConfig)
    occlusion: OcclusionConfig = field(default_factory=OcclusionConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def validate(self):
        if self.remine_interval < 1:
            raise ValidationError(f"remine_interval must be >= 1, got {self.remine_interval}")
        if self.head_epochs < 0:
            raise ValidationError("head_epochs must be >= 0")
        for name in SECTIONS:
            getattr(self, name).validate()

    def set_seed(self, seed: int):
        self.seed = int(seed)
        self.mcm.seed = self.seed
        self.head.seed = self.seed

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def hash(self) -> str:
        return config_hash(self.to_dict())


def _build_section(cls, values: Dict[str, Any], section: str):
    if not isinstance(values, dict):
        raise ValidationError(f"config section {section!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    for key in values:
        if key not in known:
            raise ValidationError(f"unknown config key {section}.{key}")
    return cls(**values)


def config_from_dict(data: Optional[Dict[str, Any]]) -> PipelineConfig:
    data = dict(data or {})
    sections = {name: _build_section(cls, data.pop(name, {}) or {}, name) for name, cls in SECTIONS.items()}
    top_level = {f.name for f in fields(PipelineConfig)} - set(SECTIONS)
    for key in data:
        if key not in top_level:
            raise ValidationError(f"unknown config key {key}")
    cfg = PipelineConfig(**data, **sections)
    # one seed drives every stage
    cfg.set_seed(cfg.seed)
    cfg.validate()
    return cfg


def load_config(path: Optional[str]) -> PipelineConfig:
    """Read a YAML pipeline config; no path gives the defaults"""
    if not path:
        return config_from_dict({})
    try:
        with open(path, "r") as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ValidationError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ValidationError(f"config {path} is not valid YAML: {e}") from e
    return config_from_dict(data)


def apply_overrides(cfg: PipelineConfig, overrides: List[str]) -> PipelineConfig:
    """Apply `section.key=value` (or `key=value`) overrides; values parse as YAML scalars"""
    data = cfg.to_dict()
    for item in overrides or []:
        if "=" not in item:
            raise ValidationError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        target = data
        *path, leaf = key.strip().split(".")
        for part in path:
            if part not in target or not isinstance(target[part], dict):
                raise ValidationError(f"unknown config section in override {key!r}")
            target = target[part]
        if leaf not in target:
            raise ValidationError(f"unknown config key in override {key!r}")
        target[leaf] = value
    return config_from_dict(data)
