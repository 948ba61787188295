"""Flat ``section.key = value`` configuration files.

Every key belongs to one of the sections below; unknown keys are rejected::

    # comment
    data.nodes = 12
    model.d_model = 16
    train.variant = full
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

from .augmentation import AugmentationConfig
from .contrastive import ContrastiveConfig
from .encoder_decoder import EncoderConfig
from .exceptions import ConfigError
from .training import Settings, TrainConfig


@dataclass
class DataConfig:
    synthetic: bool = True
    nodes: int = 12
    days: int = 10
    interval: int = 30
    seed: int = 0
    noise: float = 0.1
    series_path: Optional[str] = None
    graph_path: Optional[str] = None
    split: tuple = (0.6, 0.2, 0.2)


@dataclass
class EvalConfig:
    mape_floor: float = 1e-3
    n_seeds: int = 5


@dataclass
class SweepConfig:
    param: str = "epsilon"
    values: str = "0.1..1.0"
    step: float = 0.1


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: EncoderConfig = field(default_factory=EncoderConfig)
    aug: AugmentationConfig = field(default_factory=AugmentationConfig)
    cl: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    @property
    def settings(self) -> Settings:
        return Settings(model=self.model, aug=self.aug, cl=self.cl, train=self.train)

    def with_values(self, **sections) -> "ExperimentConfig":
        """Copy with ``section={key: value}`` overrides, re-running validation."""
        out = self
        for name, updates in sections.items():
            out = replace(out, **{name: replace(getattr(out, name), **updates)})
        return out


SECTIONS = tuple(f.name for f in fields(ExperimentConfig))

# config keys that differ from the dataclass attribute names
_ALIASES = {("train", "learning_rate"): "lr"}


def parse_value(text: str) -> Any:
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    if "," in text and ".." not in text:
        return tuple(parse_value(t) for t in text.split(","))
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _coerce(section_cls, key: str, value: Any) -> Any:
    kind = {f.name: f.type for f in fields(section_cls)}[key]
    if value is None:
        return None
    if kind in ("float", "Optional[float]") and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if kind == "int" and isinstance(value, float) and value.is_integer():
        return int(value)
    if kind == "str" and not isinstance(value, str):
        return str(value)
    return value


def parse_config(text: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    updates: dict[str, dict] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} lacks a section prefix")
        section, name = key.split(".", 1)
        name = _ALIASES.get((section, name), name)
        if section not in SECTIONS:
            raise ConfigError(f"line {lineno}: unknown section {section!r}")
        section_cls = type(getattr(cfg, section))
        if name not in {f.name for f in fields(section_cls)}:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        updates.setdefault(section, {})[name] = _coerce(section_cls, name, parse_value(value))
    try:
        return cfg.with_values(**updates)
    except TypeError as err:
        raise ConfigError(str(err)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    return parse_config(path.read_text())


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for section in SECTIONS:
        for key, value in asdict(getattr(cfg, section)).items():
            if isinstance(value, (tuple, list)):
                value = ",".join(str(v) for v in value)
            lines.append(f"{section}.{key} = {value}")
    return "\n".join(lines) + "\n"
