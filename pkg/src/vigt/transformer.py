"""Joint video-language transformer with a prepended regression token.

The fused sequence is [token; query tokens; video clips] plus a learned
position table.  Pre-norm blocks; dropout (training only) touches the
attention weights and nothing else.  The attention map of every layer is
captured so the token's view of the video can be dumped later.

With the token disabled (ablation) the same blocks run on [query; video]
and a separate attentive pooling readout has to summarize the clips.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import FeedForwardParams, LayerNormParams
from .errors import ConfigError
from .tensor import (
    AttentionParams,
    Tensor,
    add,
    concat_along_first_dim,
    multi_head_attention,
)


@dataclass
class TransformerBlock:
    heads: int
    ln1: LayerNormParams
    msa: AttentionParams
    ln2: LayerNormParams
    ffn: FeedForwardParams

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, heads: int) -> "TransformerBlock":
        return cls(
            heads=heads,
            ln1=LayerNormParams.init(d),
            msa=AttentionParams.init(rng, d),
            ln2=LayerNormParams.init(d),
            ffn=FeedForwardParams.init(rng, d),
        )

    def __call__(
        self,
        z: Tensor,
        dropout_rate: float,
        training: bool,
        rng: np.random.Generator | None,
    ) -> tuple[Tensor, np.ndarray]:
        h = self.ln1(z)
        attn_out, attn = multi_head_attention(
            h, h, h, self.msa, self.heads, dropout_rate, training, rng
        )
        z = add(attn_out, z)
        z = add(self.ffn(self.ln2(z)), z)
        return z, attn.data.copy()

    def named(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.ln1.named(f"{prefix}.ln1"))
        out.update(self.msa.named(f"{prefix}.msa"))
        out.update(self.ln2.named(f"{prefix}.ln2"))
        out.update(self.ffn.named(f"{prefix}.ffn"))
        return out


@dataclass
class TransformerOutput:
    f_r_hat: Tensor | None  # [d] token state; None when the token is disabled
    q_hat_star: Tensor  # [L, d]
    v_hat_star: Tensor  # [T, d]
    attn_by_layer: list[np.ndarray]  # each [heads, S, S]


@dataclass
class VideoLanguageTransformer:
    """N pre-norm blocks over the fused sequence, optional final norm."""

    d: int
    heads: int
    seq_q: int  # L
    seq_v: int  # T
    use_token: bool
    dropout_rate: float
    token: Tensor  # [1, d]
    positions: Tensor  # [L + T + 1, d]; row 0 idles when the token is off
    blocks: list[TransformerBlock]
    final_ln: LayerNormParams | None

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        d: int,
        heads: int,
        seq_q: int,
        seq_v: int,
        n_layers: int,
        use_token: bool = True,
        dropout_rate: float = 0.1,
        final_ln: bool = True,
    ) -> "VideoLanguageTransformer":
        if n_layers < 0:
            raise ConfigError(f"layer count must be nonnegative, got {n_layers}")
        return cls(
            d=d,
            heads=heads,
            seq_q=seq_q,
            seq_v=seq_v,
            use_token=use_token,
            dropout_rate=dropout_rate,
            token=Tensor(rng.normal(0.0, 0.02, size=(1, d)), requires_grad=True),
            positions=Tensor(
                rng.normal(0.0, 0.02, size=(seq_q + seq_v + 1, d)), requires_grad=True
            ),
            blocks=[TransformerBlock.init(rng, d, heads) for _ in range(n_layers)],
            final_ln=LayerNormParams.init(d) if final_ln else None,
        )

    def __call__(
        self,
        q_star: Tensor,
        v_star: Tensor,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> TransformerOutput:
        if q_star.shape != (self.seq_q, self.d) or v_star.shape != (self.seq_v, self.d):
            raise ConfigError(
                f"sequence shapes {q_star.shape}/{v_star.shape} do not match "
                f"configured L={self.seq_q}, T={self.seq_v}, d={self.d}"
            )
        if self.use_token:
            z = concat_along_first_dim([self.token, q_star, v_star])
            z = add(z, self.positions)
        else:
            z = concat_along_first_dim([q_star, v_star])
            z = add(z, self.positions[1:])
        maps: list[np.ndarray] = []
        for block in self.blocks:
            z, attn = block(z, self.dropout_rate, training, rng)
            maps.append(attn)
        if self.final_ln is not None:
            z = self.final_ln(z)
        off = 1 if self.use_token else 0
        return TransformerOutput(
            f_r_hat=z[0] if self.use_token else None,
            q_hat_star=z[off:off + self.seq_q],
            v_hat_star=z[off + self.seq_q:],
            attn_by_layer=maps,
        )

    def named(self, prefix: str = "vl") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {
            f"{prefix}.token": self.token,
            f"{prefix}.positions": self.positions,
        }
        for i, block in enumerate(self.blocks):
            out.update(block.named(f"{prefix}.block{i}"))
        if self.final_ln is not None:
            out.update(self.final_ln.named(f"{prefix}.final_ln"))
        return out


def token_video_attention(out: TransformerOutput) -> np.ndarray:
    """Head-averaged attention from the token to each video clip, per layer.

    Returns [n_layers, T].  Requires a run with the token enabled.
    """
    if out.f_r_hat is None:
        raise ConfigError("token attention requested from a run without the token")
    seq_q = out.q_hat_star.shape[0]
    seq_v = out.v_hat_star.shape[0]
    rows = [m.mean(axis=0)[0, 1 + seq_q: 1 + seq_q + seq_v] for m in out.attn_by_layer]
    return np.stack(rows) if rows else np.zeros((0, seq_v))


def token_query_attention(out: TransformerOutput) -> np.ndarray:
    """Head-averaged attention from the token to each query word: [n_layers, L]."""
    if out.f_r_hat is None:
        raise ConfigError("token attention requested from a run without the token")
    seq_q = out.q_hat_star.shape[0]
    rows = [m.mean(axis=0)[0, 1: 1 + seq_q] for m in out.attn_by_layer]
    return np.stack(rows) if rows else np.zeros((0, seq_q))


def token_self_attention(out: TransformerOutput) -> np.ndarray:
    """Head-averaged attention from the token to itself, per layer: [n_layers]."""
    if out.f_r_hat is None:
        raise ConfigError("token attention requested from a run without the token")
    return np.array([m.mean(axis=0)[0, 0] for m in out.attn_by_layer])


def vl_forward(
    co,
    vl: VideoLanguageTransformer,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> TransformerOutput:
    """Run the fused transformer over co-attended features."""
    return vl(co.q_star, co.v_star, training=training, rng=rng)


def vl_param_count(d: int, seq_q: int, seq_v: int, n_layers: int, final_ln: bool = True) -> int:
    """Closed-form parameter count of the fused transformer (token included)."""
    per_block = 12 * d * d + 13 * d
    total = n_layers * per_block + d + (seq_q + seq_v + 1) * d
    if final_ln:
        total += 2 * d
    return total
