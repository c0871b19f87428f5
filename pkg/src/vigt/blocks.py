"""Shared parameter bundles: linear layers, layer norm, position-wise FFN."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, add, layer_norm, matmul, relu


@dataclass
class LinearParams:
    weight: Tensor  # [d_in, d_out]
    bias: Tensor  # [d_out]

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_out: int) -> "LinearParams":
        w = Tensor(rng.normal(0.0, d_in ** -0.5, size=(d_in, d_out)), requires_grad=True)
        b = Tensor(np.zeros(d_out), requires_grad=True)
        return cls(w, b)

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.weight), self.bias)

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor
    eps: float = 1e-5

    @classmethod
    def init(cls, d: int) -> "LayerNormParams":
        return cls(
            Tensor(np.ones(d), requires_grad=True),
            Tensor(np.zeros(d), requires_grad=True),
        )

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.gain": self.gain, f"{prefix}.bias": self.bias}


@dataclass
class FeedForwardParams:
    """Position-wise two-layer FFN, hidden width 4x the model dim, ReLU between."""

    lin1: LinearParams
    lin2: LinearParams

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, expansion: int = 4) -> "FeedForwardParams":
        return cls(
            LinearParams.init(rng, d, expansion * d),
            LinearParams.init(rng, expansion * d, d),
        )

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(relu(self.lin1(x)))

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {**self.lin1.named(f"{prefix}.lin1"), **self.lin2.named(f"{prefix}.lin2")}


def sinusoidal_positions(length: int, d: int) -> np.ndarray:
    """Fixed sine/cosine position table of shape [length, d].

    Even columns carry sin, odd columns cos, wavelengths a geometric ramp
    from 2*pi to 10000*2*pi across column pairs.
    """
    half = (d + 1) // 2
    pos = np.arange(length)[:, None]
    i = np.arange(half)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / d)
    table = np.zeros((length, 2 * half))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table[:, :d]
