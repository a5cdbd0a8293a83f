"""Run configuration: model, loss, training and generator sections.

Configs are JSON. Precedence is defaults < config file < dotted
``key=value`` overrides; unknown keys are rejected at every layer.
"""

from dataclasses import asdict, dataclass, field, fields, is_dataclass
import json

from .synthetic import INTENTS, GeneratorConfig


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    channels: int = 64
    heads: int = 4
    image_side: int = 64
    image_widths: list = field(default_factory=lambda: [16, 32, 48, 64])
    edge_widths: list = field(default_factory=lambda: [32, 32, 64])
    knn_k: int = 20
    n_object: int = 256
    n_human_full: int = 162
    n_human_sampled: int = 81
    n_classes: int = len(INTENTS)
    ffn_mult: int = 4
    template: str = "desk"

    @property
    def head_dim(self):
        return self.channels // self.heads

    @property
    def image_tokens(self):
        side = self.image_side // 2 ** len(self.image_widths)
        return side * side

    @classmethod
    def paper(cls):
        return cls(channels=768, heads=12, image_side=224,
                   image_widths=[64, 128, 256, 512, 1024], edge_widths=[64, 64, 128, 256],
                   n_object=2048, n_human_full=6890, n_human_sampled=1723, template="paper")

    def validate(self):
        if self.channels % self.heads:
            raise ConfigError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.image_side % 2 ** len(self.image_widths):
            raise ConfigError("image side must be divisible by 2**len(image_widths)")
        if self.knn_k + 1 > min(self.n_object, self.n_human_sampled):
            raise ConfigError("knn_k too large for the point counts")
        return self


@dataclass
class LossWeights:
    w1: float = 40.0
    w2: float = 40.0
    w3: float = 20.0
    w4: float = 20.0
    alpha: float = 0.25
    gamma: float = 2.0
    epsilon: float = 1e-6
    semantic_term: str = "one_minus_phi"

    def validate(self):
        if min(self.w1, self.w2, self.w3, self.w4) < 0:
            raise ConfigError("loss weights must be non-negative")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.gamma < 0 or not self.epsilon > 0:
            raise ConfigError("gamma must be >= 0 and epsilon > 0")
        if self.semantic_term not in ("one_minus_phi", "plus_phi"):
            raise ConfigError(f"unknown semantic_term {self.semantic_term!r}")
        return self


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 24
    epochs: int = 100
    seed: int = 0
    precision: int = 32
    eval_every: int = 50
    split_ratios: list = field(default_factory=lambda: [0.8, 0.1, 0.1])
    contact_threshold: float = 0.5
    affordance_threshold: float = 0.5

    def validate(self):
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 0 or self.eval_every < 1:
            raise ConfigError("batch_size and eval_every must be positive, epochs >= 0")
        if self.precision not in (32, 64):
            raise ConfigError("precision must be 32 or 64")
        return self


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: GeneratorConfig = field(default_factory=GeneratorConfig)

    def validate(self):
        self.model.validate()
        self.loss.validate()
        self.train.validate()
        if self.data.n_object != self.model.n_object:
            raise ConfigError("data.n_object must equal model.n_object")
        if self.data.image_side != self.model.image_side:
            raise ConfigError("data.image_side must equal model.image_side")
        return self

    def to_dict(self):
        return asdict(self)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _merge(obj, d, path=""):
    names = {f.name: f for f in fields(obj)}
    for key, value in d.items():
        if key not in names:
            raise ConfigError(f"unknown config key {path + key!r}")
        current = getattr(obj, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"{path + key} must be an object")
            _merge(current, value, path + key + ".")
        else:
            setattr(obj, key, value)


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg, overrides):
    """Apply ``["train.epochs=2", ...]`` style overrides in place."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        nested = _parse_value(text)
        for p in reversed(parts):
            nested = {p: nested}
        _merge(cfg, nested)
    return cfg


def load_config(path=None, overrides=None, base=None):
    cfg = base if base is not None else RunConfig()
    if path:
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        _merge(cfg, d)
    apply_overrides(cfg, overrides)
    return cfg.validate()


def from_dict(d):
    cfg = RunConfig()
    _merge(cfg, d)
    return cfg.validate()
