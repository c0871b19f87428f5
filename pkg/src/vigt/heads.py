"""Prediction heads and the moment/interval parameterizations.

A moment is a (center, width) pair in [0, 1]; an interval is the derived
(start, end) with both ends clamped into [0, 1].  The regression head
reads the token state, the foreground head scores each clip, and the
attentive pooling head replaces the token in the ablation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Generic, TypeVar

import numpy as np

from .blocks import LinearParams
from .errors import ConfigError
from .tensor import (
    Tensor,
    clamp,
    matmul,
    relu,
    reshape,
    sigmoid,
    softmax_lastdim,
    transpose,
)

F = TypeVar("F")  # float or Tensor


@dataclass
class Moment(Generic[F]):
    center: F
    width: F


@dataclass
class Interval(Generic[F]):
    start: F
    end: F


def moment_to_interval(m: Moment) -> Interval:
    """(center, width) -> (start, end), both ends clamped into [0, 1]."""
    if isinstance(m.center, Tensor):
        half = m.width * 0.5
        return Interval(clamp(m.center - half, 0.0, 1.0), clamp(m.center + half, 0.0, 1.0))
    half = m.width / 2.0
    return Interval(
        float(np.clip(m.center - half, 0.0, 1.0)),
        float(np.clip(m.center + half, 0.0, 1.0)),
    )


def _regression_stack(rng: np.random.Generator, d: int) -> list[LinearParams]:
    if d % 2 != 0:
        raise ConfigError(f"regression head needs an even model dim, got {d}")
    return [
        LinearParams.init(rng, d, d),
        LinearParams.init(rng, d, d // 2),
        LinearParams.init(rng, d // 2, 2),
    ]


def _run_regression_stack(stack: list[LinearParams], x: Tensor) -> Moment:
    h = relu(stack[0](x))
    h = relu(stack[1](h))
    out = sigmoid(stack[2](h))
    flat = reshape(out, (2,))
    return Moment(center=flat[0], width=flat[1])


@dataclass
class BoundaryHead:
    """Token state [d] -> sigmoid (center, width), via d -> d -> d/2 -> 2."""

    stack: list[LinearParams]

    @classmethod
    def init(cls, rng: np.random.Generator, d: int) -> "BoundaryHead":
        return cls(_regression_stack(rng, d))

    def __call__(self, f_r_hat: Tensor) -> Moment:
        return _run_regression_stack(self.stack, reshape(f_r_hat, (1, -1)))

    def named(self, prefix: str = "reg") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, lin in enumerate(self.stack):
            out.update(lin.named(f"{prefix}.lin{i}"))
        return out


@dataclass
class ForegroundHead:
    """Clip states [T, d] -> per-clip foreground probability in (0, 1).

    ``calls`` counts invocations so tests can assert the head stays cold
    on the prediction path.
    """

    lin: LinearParams
    calls: int = 0

    @classmethod
    def init(cls, rng: np.random.Generator, d: int) -> "ForegroundHead":
        return cls(LinearParams.init(rng, d, 1))

    def __call__(self, v_hat_star: Tensor) -> Tensor:
        self.calls += 1
        t = v_hat_star.shape[0]
        return reshape(sigmoid(self.lin(v_hat_star)), (t,))

    def named(self, prefix: str = "cls") -> dict[str, Tensor]:
        return self.lin.named(f"{prefix}.lin")


@dataclass
class AttentivePoolHead:
    """Token-free readout: score clips, softmax-pool, regress a moment.

    Each clip state is scored by a learned vector, the softmax over clips
    weights a pooled summary, and the summary feeds a regression stack of
    the same shape the token head uses.
    """

    score: Tensor  # [d, 1]
    stack: list[LinearParams]

    @classmethod
    def init(cls, rng: np.random.Generator, d: int) -> "AttentivePoolHead":
        score = Tensor(rng.normal(0.0, d ** -0.5, size=(d, 1)), requires_grad=True)
        return cls(score, _regression_stack(rng, d))

    def __call__(self, v_hat_star: Tensor) -> Moment:
        logits = transpose(matmul(v_hat_star, self.score), (1, 0))  # [1, T]
        weights = softmax_lastdim(logits)
        pooled = matmul(weights, v_hat_star)  # [1, d]
        return _run_regression_stack(self.stack, pooled)

    def named(self, prefix: str = "pool") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {f"{prefix}.score": self.score}
        for i, lin in enumerate(self.stack):
            out.update(lin.named(f"{prefix}.lin{i}"))
        return out


def ffn_reg(f_r_hat: Tensor, params: BoundaryHead) -> Moment:
    """Boundary regression from the token state."""
    return params(f_r_hat)


def ffn_cls(v_hat_star: Tensor, params: ForegroundHead) -> Tensor:
    """Per-clip foreground scores from the clip states."""
    return params(v_hat_star)


def attentive_regression_head(v_hat_star: Tensor, params: AttentivePoolHead) -> Moment:
    """Token-free boundary regression by attention pooling over clips."""
    return params(v_hat_star)
