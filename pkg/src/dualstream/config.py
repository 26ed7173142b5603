"""Flat text configuration.

Files are lines of ``section.key = value`` with ``#`` comments.  Every
key maps onto a field of one of the section dataclasses below; parsing
is driven by the field's default type.  Unknown keys, unparsable values
and invalid combinations raise ConfigError with the file line that
caused them.  The same ``section.key=value`` syntax is used for command
line overrides.
"""

from dataclasses import dataclass, fields, asdict

from .errors import ConfigError
from .losses import LossFlags, LossWeights
from .model import ModelConfig
from .synthdata import DataConfig


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    lr: float = 0.01
    lr_decay: float = 0.1
    lr_decay_every: int = 10
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    checkpoint_every: int = 0   # extra per-epoch checkpoints; 0 = final only
    drop_last: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.lr_decay_every < 1:
            raise ConfigError("lr_decay_every must be at least 1")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError(f"lr_decay must be in (0, 1], got {self.lr_decay}")


@dataclass
class EmbedConfig:
    path: str = ""    # empty: generate unit-norm stand-ins from seed
    seed: int = 101


@dataclass
class LossConfig:
    lambda_fdist: float = 0.05
    lambda_sdist: float = 1.0
    lambda_con: float = 0.6
    con_warmup_epochs: int = 5
    tau: float = 0.95
    enable_fdist: bool = True
    enable_sdist: bool = True
    enable_con: bool = True
    full_bernoulli_kl: bool = False
    pointwise_mmd: bool = False
    bidirectional_distill: bool = False

    def __post_init__(self):
        if not 0.5 <= self.tau < 1.0:
            raise ConfigError(f"tau must be in [0.5, 1), got {self.tau}")
        for name in ("lambda_fdist", "lambda_sdist", "lambda_con"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.con_warmup_epochs < 0:
            raise ConfigError("con_warmup_epochs must be non-negative")

    def weights(self):
        return LossWeights(lambda_fdist=self.lambda_fdist,
                           lambda_sdist=self.lambda_sdist,
                           lambda_con=self.lambda_con,
                           con_warmup_epochs=self.con_warmup_epochs,
                           tau=self.tau)

    def flags(self):
        return LossFlags(enable_fdist=self.enable_fdist,
                         enable_sdist=self.enable_sdist,
                         enable_con=self.enable_con,
                         full_bernoulli_kl=self.full_bernoulli_kl,
                         pointwise_mmd=self.pointwise_mmd,
                         bidirectional_distill=self.bidirectional_distill)


@dataclass
class RunConfig:
    data: DataConfig
    model: ModelConfig
    train: TrainConfig
    loss: LossConfig
    embed: EmbedConfig


_SECTIONS = {
    "data": DataConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "loss": LossConfig,
    "embed": EmbedConfig,
}


def default_config():
    return RunConfig(data=DataConfig(), model=ModelConfig(), train=TrainConfig(),
                     loss=LossConfig(), embed=EmbedConfig())


def _parse_value(raw, default, where):
    kind = type(default)
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is tuple:
            if not raw:
                raise ValueError("empty tuple")
            return tuple(int(p.strip()) for p in raw.split(","))
        if kind is str:
            return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    raise ConfigError(f"{where}: no parser for type {kind.__name__}")


def _field_defaults(section_cls):
    try:
        bare = section_cls()
    except TypeError:
        raise ConfigError(f"section {section_cls.__name__} needs defaults")
    return {f.name: getattr(bare, f.name) for f in fields(section_cls)}


# defaults are introspected once; every section must construct bare
_DEFAULTS = {name: _field_defaults(cls) for name, cls in _SECTIONS.items()}


def _assign(values, dotted, raw, where):
    if "." not in dotted:
        raise ConfigError(f"{where}: expected section.key, got {dotted!r}")
    section, key = dotted.split(".", 1)
    if section not in _SECTIONS:
        raise ConfigError(
            f"{where}: unknown section {section!r} "
            f"(have {', '.join(sorted(_SECTIONS))})"
        )
    if key not in _DEFAULTS[section]:
        raise ConfigError(f"{where}: unknown key {key!r} in section {section!r}")
    values[section][key] = _parse_value(raw, _DEFAULTS[section][key],
                                        f"{where}: {dotted}")


def load_config(path=None, overrides=()):
    """Build a RunConfig from defaults, an optional file, then overrides."""
    values = {name: {} for name in _SECTIONS}
    if path is not None:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                body = line.split("#", 1)[0].strip()
                if not body:
                    continue
                if "=" not in body:
                    raise ConfigError(f"{path}: line {lineno}: expected 'key = value'")
                dotted, raw = body.split("=", 1)
                _assign(values, dotted.strip(), raw, f"{path}: line {lineno}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected section.key=value")
        dotted, raw = item.split("=", 1)
        _assign(values, dotted.strip(), raw, f"override {item!r}")

    built = {}
    for name, cls in _SECTIONS.items():
        try:
            built[name] = cls(**values[name])
        except ConfigError:
            raise
        except TypeError as exc:
            raise ConfigError(f"section {name}: {exc}") from None
    return RunConfig(**built)


def config_lines(run):
    """Stable ``section.key = value`` echo of a RunConfig, for log headers."""
    lines = []
    for name in sorted(_SECTIONS):
        section = getattr(run, name)
        for f in fields(section):
            v = getattr(section, f.name)
            if isinstance(v, tuple):
                text = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                text = "true" if v else "false"
            elif isinstance(v, float):
                text = repr(v)
            else:
                text = str(v)
            lines.append(f"{name}.{f.name} = {text}")
    return lines


def clone_config(run, **section_updates):
    """A modified copy; section_updates maps section name -> dict of fields."""
    parts = {}
    for name, cls in _SECTIONS.items():
        current = asdict(getattr(run, name))
        current.update(section_updates.get(name, {}))
        parts[name] = cls(**current)
    return RunConfig(**parts)
