"""Run configuration: model shape and training schedule as dataclasses.

Defaults reproduce the full-size profile (d=512, 6 fused layers, 128
clips, 300-dim word vectors).  ``toy()`` variants shrink everything to
CPU-friendly sizes for the synthetic task and verification runs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .errors import ConfigError
from .losses import LossFlags, LossWeights


@dataclass
class ModelConfig:
    d: int = 512
    heads: int = 8
    n_layers: int = 6
    k1d: int = 7
    n_conv: int = 4
    t: int = 128  # video clips after pooling
    l: int = 20  # query tokens
    d_v: int = 1024
    d_q: int = 300
    dropout: float = 0.1
    final_ln: bool = True
    encoder_mode: str = "full"
    no_token: bool = False
    precision: str = "f32"

    def validate(self) -> "ModelConfig":
        if self.d % self.heads != 0:
            raise ConfigError(f"d={self.d} not divisible by heads={self.heads}")
        if self.d % 2 != 0:
            raise ConfigError(f"d={self.d} must be even for the regression head")
        if self.k1d % 2 == 0:
            raise ConfigError(f"k1d={self.k1d} must be odd")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout={self.dropout} outside [0, 1)")
        if min(self.d, self.t, self.l, self.d_v, self.d_q) < 1:
            raise ConfigError("all dimensions must be positive")
        if self.n_layers < 0:
            raise ConfigError(f"n_layers must be nonnegative, got {self.n_layers}")
        return self

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        base = dict(
            d=64, heads=4, n_layers=2, k1d=5, n_conv=2,
            t=32, l=6, d_v=64, d_q=32, dropout=0.0,
        )
        base.update(overrides)
        return cls(**base).validate()


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 100
    max_steps: int = 2000
    seed: int = 0
    eval_every: int = 200
    lam: float = 0.5
    beta: float = 1.0
    alpha: float = 2.0
    use_l1: bool = True
    use_giou: bool = True
    use_cls: bool = True

    def weights(self) -> LossWeights:
        return LossWeights(lam=self.lam, beta=self.beta, alpha=self.alpha)

    def flags(self) -> LossFlags:
        return LossFlags(use_l1=self.use_l1, use_giou=self.use_giou, use_cls=self.use_cls)

    @classmethod
    def toy(cls, **overrides) -> "TrainConfig":
        base = dict(batch_size=32, max_steps=600, lr=1e-3)
        base.update(overrides)
        return cls(**base)


def config_to_dict(model: ModelConfig, train: TrainConfig) -> dict:
    return {"model": asdict(model), "train": asdict(train)}


def config_from_dict(blob: dict) -> tuple[ModelConfig, TrainConfig]:
    def build(cls, payload):
        known = {f.name for f in fields(cls)}
        extra = set(payload) - known
        if extra:
            raise ConfigError(f"unknown {cls.__name__} keys: {sorted(extra)}")
        return cls(**payload)

    model = build(ModelConfig, blob.get("model", {}))
    train = build(TrainConfig, blob.get("train", {}))
    return model.validate(), train
