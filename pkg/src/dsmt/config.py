"""Flat ``key = value`` run configuration with presets and ablation aliases."""

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .attention import MODES as ATTENTION_MODES
from .decoder import DecoderConfig, LossConfig
from .encoder import ACTIVATIONS, COMPOSE_MODES
from .errors import ConfigError

PRESETS = {
    "fb15k-237": dict(lr=0.001, batch_size=128, d_in=100, d=200, label_smoothing=0.2, k=0.2, compose="corr"),
    "wn18rr": dict(lr=0.0003, batch_size=256, d_in=400, d=200, label_smoothing=0.1, k=0.5, compose="mult"),
}

ABLATIONS = {
    "no-gc": dict(lambda1=0.0, lambda2=0.0),
    "no-tu": dict(k=0.0),
    "no-mhsa": dict(attention="uniform"),
}


@dataclass
class Config:
    # paths
    train_path: str = ""
    valid_path: str = ""
    test_path: str = ""
    out_dir: str = "run"
    checkpoint: str = ""
    attention_queries: str = ""
    preset: str = "none"
    # encoder
    compose: str = "corr"
    d_in: int = 100
    d: int = 200
    gcn_layers: int = 1
    activation: str = "tanh"
    mean_aggregation: bool = False
    # attention
    attention: str = "mhsa"
    n_heads: int = 2
    d_a: int = 100
    # decoder
    reshape_h: int = 10
    reshape_w: int = 20
    n_filters: int = 32
    kernel_h: int = 3
    kernel_w: int = 3
    padding: int = 0
    input_drop: float = 0.2
    feature_drop: float = 0.2
    hidden_drop: float = 0.3
    decoder_activation: str = "relu"
    # objective
    label_smoothing: float = 0.2
    k: float = 0.2
    lambda1: float = 0.01
    lambda2: float = 0.01
    # training
    lr: float = 0.001
    batch_size: int = 128
    max_epochs: int = 500
    eval_interval: int = 5
    patience: int = 10
    eval_batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.compose not in COMPOSE_MODES:
            raise ConfigError(f"compose must be one of {COMPOSE_MODES}, got {self.compose!r}")
        if self.attention not in ATTENTION_MODES:
            raise ConfigError(f"attention must be one of {ATTENTION_MODES}, got {self.attention!r}")
        for key in ("activation", "decoder_activation"):
            if getattr(self, key) not in ACTIVATIONS:
                raise ConfigError(f"{key} must be one of {tuple(ACTIVATIONS)}")
        for key in ("d_in", "d", "gcn_layers", "n_heads", "d_a", "reshape_h", "reshape_w",
                    "n_filters", "kernel_h", "kernel_w", "batch_size", "max_epochs",
                    "eval_interval", "patience", "eval_batch_size"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be positive")
        if self.reshape_h * self.reshape_w != self.d:
            raise ConfigError(f"reshape_h * reshape_w must equal d ({self.reshape_h}x{self.reshape_w} != {self.d})")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        try:
            self.loss_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def decoder_config(self):
        return DecoderConfig(
            reshape_h=self.reshape_h, reshape_w=self.reshape_w, n_filters=self.n_filters,
            kernel_h=self.kernel_h, kernel_w=self.kernel_w, padding=self.padding,
            input_drop=self.input_drop, feature_drop=self.feature_drop,
            hidden_drop=self.hidden_drop, activation=self.decoder_activation,
        )

    def loss_config(self):
        return LossConfig(self.label_smoothing, self.k, self.lambda1, self.lambda2)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_text(self):
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_dict(cls, values):
        return cls(**_coerce_all(values))


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _coerce(key, raw):
    typ = _FIELD_TYPES[key]
    if not isinstance(raw, str):
        return raw
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(typ, '__name__', typ)}") from None
    return raw


def _coerce_all(values):
    unknown = sorted(set(values) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    merged = {}
    preset = values.get("preset", "none")
    if preset != "none":
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        merged.update(PRESETS[preset])
    merged.update({k: _coerce(k, v) for k, v in values.items()})
    return merged


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = value
    return values


def load_config(path=None, overrides=None, ablation=None):
    """Read a config file, apply ``overrides`` then an ablation alias."""
    values = {}
    if path is not None:
        path = Path(path)
        values = parse_config_text(path.read_text(encoding="utf-8"), str(path))
    values.update(overrides or {})
    if ablation:
        if ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {ablation!r}; choose from {sorted(ABLATIONS)}")
        values.update(ABLATIONS[ablation])
    return Config.from_dict(values)
