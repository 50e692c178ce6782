"""Training configuration and its INI-style file format.

Three sections map onto the three config objects::

    [train]
    learning_rate = 4e-4
    batch_size = 2
    [net]
    k_neighbors = 5
    [data]
    mode = synthetic
    style_dirs = painters/monet, painters/munch

Unknown keys and unparsable values raise :class:`ConfigError`.
"""

import configparser
import dataclasses
import io
from dataclasses import dataclass, field

from .data import DatasetSpec
from .nn import NetConfig


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 4e-4
    batch_size: int = 2
    epochs: int = 200
    decay_start_epoch: int = 50
    lambda_idt: float = 25.0
    margin_mu: float = 1.0
    photos_per_epoch: int = 6144
    seed: int = 0
    beta1: float = 0.5
    beta2: float = 0.999
    log_every: int = 10
    checkpoint_every: int = 100
    net: NetConfig = field(default_factory=NetConfig)
    data: DatasetSpec = field(default_factory=DatasetSpec)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1 or self.photos_per_epoch < 1:
            raise ConfigError("batch_size, epochs and photos_per_epoch must be positive")
        if not 0 <= self.decay_start_epoch <= self.epochs:
            raise ConfigError("decay_start_epoch must lie in [0, epochs]")
        if self.lambda_idt < 0 or self.margin_mu < 0:
            raise ConfigError("lambda_idt and margin_mu must be non-negative")

    @classmethod
    def desk(cls, **overrides):
        """32x32 synthetic-data configuration sized for a CPU."""
        base = dict(net=NetConfig.desk(), data=DatasetSpec(crop_size=32), photos_per_epoch=64)
        base.update(overrides)
        return cls(**base)

    def to_dict(self):
        return dataclasses.asdict(self)


_SECTIONS = {"train": TrainConfig, "net": NetConfig, "data": DatasetSpec}


def _scalar_fields(cls):
    return {f.name: f for f in dataclasses.fields(cls) if f.name not in ("net", "data")}


def _parse_value(raw, default):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, list):
        return [item.strip() for item in raw.split(",") if item.strip()]
    return raw


def _format_value(value):
    if isinstance(value, list):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _section_values(cls, items, section):
    defaults = cls() if cls is not TrainConfig else TrainConfig()
    known = _scalar_fields(cls)
    values = {}
    for key, raw in items:
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        try:
            values[key] = _parse_value(raw, getattr(defaults, key))
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from None
    return values


def from_sections(sections, base=None):
    """Build a TrainConfig from ``{section: {key: raw string}}`` on top of ``base``."""
    base = base or TrainConfig()
    for name in sections:
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
    try:
        net = dataclasses.replace(base.net, **_section_values(NetConfig, sections.get("net", {}).items(), "net"))
        data = dataclasses.replace(base.data, **_section_values(DatasetSpec, sections.get("data", {}).items(), "data"))
        train = _section_values(TrainConfig, sections.get("train", {}).items(), "train")
        return dataclasses.replace(base, net=net, data=data, **train)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def parse_config(text, base=None):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return from_sections({s: dict(parser.items(s)) for s in parser.sections()}, base)


def load_config(path, overrides=(), base=None):
    """Read a config file, then apply ``section.key=value`` overrides."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg = parse_config(text, base)
    return apply_overrides(cfg, overrides)


def apply_overrides(cfg, overrides):
    sections = {}
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        sections.setdefault(section, {})[name] = value
    return from_sections(sections, cfg) if sections else cfg


def dump_config(cfg):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["train"] = {k: _format_value(getattr(cfg, k)) for k in _scalar_fields(TrainConfig)}
    parser["net"] = {k: _format_value(v) for k, v in dataclasses.asdict(cfg.net).items()}
    parser["data"] = {k: _format_value(v) for k, v in dataclasses.asdict(cfg.data).items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
