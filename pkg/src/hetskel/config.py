"""Run configuration: an INI file with sections, plus ``section.key=value`` overrides.

Every run writes the fully resolved configuration next to its outputs; loading
that snapshot back reproduces the run.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .encoder import EncoderConfig
from .errors import ConfigError
from .objectives import LossConfig
from .synthetic import GeneratorConfig


@dataclass
class DataConfig:
    n_classes: int = 4
    samples_per_class: int = 128
    test_per_class: int = 64
    frames: int = 16
    persons: int = 1
    noise_std: float = 0.0
    offset_std: float = 0.3
    seed: int = 0
    dataset_dir: str = ""

    def generator(self) -> GeneratorConfig:
        return GeneratorConfig(
            n_classes=self.n_classes,
            samples_per_class=self.samples_per_class,
            test_per_class=self.test_per_class,
            frames=self.frames,
            persons=self.persons,
            noise_std=self.noise_std,
            offset_std=self.offset_std,
            seed=self.seed,
        )


@dataclass
class ModelConfig:
    d_model: int = 32
    hidden: int = 64
    spatial_layers: int = 1
    temporal_layers: int = 1
    feature_dim: int = 64
    projector_hidden: int = 64
    projector_dim: int = 64
    max_frames: int = 64
    projector_norm: bool = True
    lift_hidden: int = 64
    leaky_slope: float = 0.01
    embeddings: str = ""

    def encoder(self) -> EncoderConfig:
        names = {f.name for f in fields(EncoderConfig)}
        return EncoderConfig(**{k: v for k, v in asdict(self).items() if k in names})


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    streams: str = "JCS"
    crop_min: float = 0.8
    max_angle: float = 0.0
    aug_noise: float = 0.0


@dataclass
class EvalConfig:
    probe_epochs: int = 100
    probe_lr: float = 1e-2
    probe_batch: int = 64
    feature: str = "auto"
    fraction: float = 1.0
    finetune_epochs: int = 20
    finetune_lr: float = 1e-3


SECTIONS = {"data": DataConfig, "model": ModelConfig, "loss": LossConfig, "train": TrainConfig, "eval": EvalConfig}


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.train.batch_size < 2:
            raise ConfigError(f"train.batch_size must be >= 2, got {self.train.batch_size}")
        if self.train.epochs < 0:
            raise ConfigError("train.epochs must be non-negative")
        streams = self.train.streams.upper()
        if not streams or set(streams) - set("JCS") or len(set(streams)) != len(streams):
            raise ConfigError(f"train.streams must be a non-empty subset of JCS, got {self.train.streams!r}")
        if not 0.0 < self.eval.fraction <= 1.0:
            raise ConfigError(f"eval.fraction must lie in (0, 1], got {self.eval.fraction}")
        if not 0.0 < self.train.crop_min <= 1.0:
            raise ConfigError(f"train.crop_min must lie in (0, 1], got {self.train.crop_min}")
        if self.eval.feature not in ("auto", "F", "J", "C", "S"):
            raise ConfigError(f"eval.feature must be auto, F, J, C or S, got {self.eval.feature!r}")

    @property
    def streams(self) -> tuple[str, ...]:
        return tuple(s for s in "JCS" if s in self.train.streams.upper())

    def to_text(self) -> str:
        lines = []
        for name in SECTIONS:
            lines.append(f"[{name}]")
            for key, value in asdict(getattr(self, name)).items():
                lines.append(f"{key} = {_format(value)}")
            lines.append("")
        return "\n".join(lines)

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(section: str, key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def _apply(values: dict[str, dict], section: str, key: str, raw: str) -> None:
    if section not in SECTIONS:
        raise ConfigError(f"unknown config section {section!r}; expected one of {sorted(SECTIONS)}")
    defaults = asdict(SECTIONS[section]())
    if key not in defaults:
        raise ConfigError(f"unknown config key {section}.{key}")
    values[section][key] = _coerce(section, key, raw, defaults[key])


def parse_override(item: str) -> tuple[str, str, str]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form section.key=value")
    lhs, value = item.split("=", 1)
    if "." not in lhs:
        raise ConfigError(f"override key {lhs!r} must be section.key")
    section, key = lhs.strip().split(".", 1)
    return section, key.strip(), value


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    """Defaults, then the file at ``path`` if given, then ``overrides`` in order."""
    text = ""
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        text = path.read_text()
    return config_from_text(text, overrides, source=str(path))


def config_from_text(text: str, overrides: list[str] | None = None, source: str = "<config>") -> RunConfig:
    values: dict[str, dict] = {name: {} for name in SECTIONS}
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    for section in parser.sections():
        for key, raw in parser.items(section):
            _apply(values, section, key, raw)
    for item in overrides or []:
        _apply(values, *parse_override(item))
    try:
        parts = {name: cls(**values[name]) for name, cls in SECTIONS.items()}
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(**parts)
