"""Per-modality feature encoding and cross-modal co-attention.

The feature encoder is a pre-norm stack: fixed sinusoidal positions are
added to the projected inputs, then a residual wraps the whole strip of
1-D convolutions, then self-attention and a position-wise FFN each get
their own pre-norm residual.  One encoder instance is shared between the
video and query streams unless configured otherwise.

Co-attention is the post-norm flavour: each stream attends into the
other, and normalization follows each residual add.  The two directions
keep independent parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocks import FeedForwardParams, LayerNormParams, LinearParams, sinusoidal_positions
from .errors import ConfigError
from .tensor import (
    AttentionParams,
    Tensor,
    add,
    conv1d,
    multi_head_attention,
    relu,
)

ENCODER_MODES = ("full", "no_fe", "no_cmca", "no_fe_no_cmca", "cmca_then_fe", "unshared_fe")


@dataclass
class ConvLayerParams:
    kernel: Tensor  # [K, d, d]
    bias: Tensor  # [d]

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, k: int) -> "ConvLayerParams":
        fan_in = k * d
        kernel = Tensor(rng.normal(0.0, fan_in ** -0.5, size=(k, d, d)), requires_grad=True)
        return cls(kernel, Tensor(np.zeros(d), requires_grad=True))

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.kernel": self.kernel, f"{prefix}.bias": self.bias}


@dataclass
class FeatureEncoderBlock:
    """Positions + conv strip + self-attention + FFN, all pre-norm residual."""

    d: int
    heads: int
    ln_conv: LayerNormParams
    convs: list[ConvLayerParams]
    ln_msa: LayerNormParams
    msa: AttentionParams
    ln_ffn: LayerNormParams
    ffn: FeedForwardParams

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, heads: int, k: int, n_conv: int) -> "FeatureEncoderBlock":
        return cls(
            d=d,
            heads=heads,
            ln_conv=LayerNormParams.init(d),
            convs=[ConvLayerParams.init(rng, d, k) for _ in range(n_conv)],
            ln_msa=LayerNormParams.init(d),
            msa=AttentionParams.init(rng, d),
            ln_ffn=LayerNormParams.init(d),
            ffn=FeedForwardParams.init(rng, d),
        )

    def __call__(self, x: Tensor) -> tuple[Tensor, np.ndarray]:
        """Encode a [T, d] sequence; also return the self-attention map."""
        x = add(x, Tensor(sinusoidal_positions(x.shape[0], self.d)))
        h = self.ln_conv(x)
        for conv in self.convs:
            h = relu(conv1d(h, conv.kernel, conv.bias))
        x = add(h, x)
        normed = self.ln_msa(x)
        attn_out, attn = multi_head_attention(normed, normed, normed, self.msa, self.heads)
        x = add(attn_out, x)
        x = add(self.ffn(self.ln_ffn(x)), x)
        return x, attn.data.copy()

    def named(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.ln_conv.named(f"{prefix}.ln_conv"))
        for i, conv in enumerate(self.convs):
            out.update(conv.named(f"{prefix}.conv{i}"))
        out.update(self.ln_msa.named(f"{prefix}.ln_msa"))
        out.update(self.msa.named(f"{prefix}.msa"))
        out.update(self.ln_ffn.named(f"{prefix}.ln_ffn"))
        out.update(self.ffn.named(f"{prefix}.ffn"))
        return out


@dataclass
class CrossAttentionBlock:
    """Post-norm cross-attention: LN(MSA(q; kv) + q) then LN(FFN + residual)."""

    heads: int
    msa: AttentionParams
    ln1: LayerNormParams
    ffn: FeedForwardParams
    ln2: LayerNormParams

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, heads: int) -> "CrossAttentionBlock":
        return cls(
            heads=heads,
            msa=AttentionParams.init(rng, d),
            ln1=LayerNormParams.init(d),
            ffn=FeedForwardParams.init(rng, d),
            ln2=LayerNormParams.init(d),
        )

    def __call__(self, q: Tensor, kv: Tensor) -> tuple[Tensor, np.ndarray]:
        attn_out, attn = multi_head_attention(q, kv, kv, self.msa, self.heads)
        h = self.ln1(add(attn_out, q))
        out = self.ln2(add(self.ffn(h), h))
        return out, attn.data.copy()

    def named(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.msa.named(f"{prefix}.msa"))
        out.update(self.ln1.named(f"{prefix}.ln1"))
        out.update(self.ffn.named(f"{prefix}.ffn"))
        out.update(self.ln2.named(f"{prefix}.ln2"))
        return out


@dataclass
class CoAttendedFeatures:
    """Both streams after encoding, plus the attention maps for inspection."""

    q_star: Tensor  # [L, d]
    v_star: Tensor  # [T, d]
    attn_q2v: np.ndarray | None  # [heads, L, T]
    attn_v2q: np.ndarray | None  # [heads, T, L]
    fe_attn: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class VideoLanguageEncoder:
    """Input projections, the (possibly shared) feature encoder, co-attention.

    ``mode`` selects the composition:
      full            project -> encode -> co-attend
      no_fe           project -> co-attend
      no_cmca         project -> encode
      no_fe_no_cmca   project only
      cmca_then_fe    project -> co-attend -> encode
      unshared_fe     like full but the streams get separate encoder weights
    """

    d: int
    heads: int
    mode: str
    proj_v: LinearParams
    proj_q: LinearParams
    fe: FeatureEncoderBlock | None
    fe_q: FeatureEncoderBlock | None  # only for unshared_fe
    cmca_q: CrossAttentionBlock | None
    cmca_v: CrossAttentionBlock | None

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        d: int,
        heads: int,
        d_v: int,
        d_q: int,
        k1d: int,
        n_conv: int,
        mode: str = "full",
    ) -> "VideoLanguageEncoder":
        if mode not in ENCODER_MODES:
            raise ConfigError(f"unknown encoder mode {mode!r}, expected one of {ENCODER_MODES}")
        needs_fe = mode in ("full", "no_cmca", "cmca_then_fe", "unshared_fe")
        needs_cmca = mode in ("full", "no_fe", "cmca_then_fe", "unshared_fe")
        return cls(
            d=d,
            heads=heads,
            mode=mode,
            proj_v=LinearParams.init(rng, d_v, d),
            proj_q=LinearParams.init(rng, d_q, d),
            fe=FeatureEncoderBlock.init(rng, d, heads, k1d, n_conv) if needs_fe else None,
            fe_q=FeatureEncoderBlock.init(rng, d, heads, k1d, n_conv)
            if mode == "unshared_fe"
            else None,
            cmca_q=CrossAttentionBlock.init(rng, d, heads) if needs_cmca else None,
            cmca_v=CrossAttentionBlock.init(rng, d, heads) if needs_cmca else None,
        )

    def _encode(self, v: Tensor, q: Tensor, fe_attn: dict[str, np.ndarray]) -> tuple[Tensor, Tensor]:
        fe_for_q = self.fe_q if self.fe_q is not None else self.fe
        v, attn_v = self.fe(v)
        q, attn_q = fe_for_q(q)
        fe_attn["fe_video"] = attn_v
        fe_attn["fe_query"] = attn_q
        return v, q

    def __call__(self, video: Tensor, query: Tensor) -> CoAttendedFeatures:
        """Fuse raw video [T, d_v] and query [L, d_q] features."""
        v = self.proj_v(video)
        q = self.proj_q(query)
        fe_attn: dict[str, np.ndarray] = {}
        if self.mode in ("full", "no_cmca", "unshared_fe"):
            v, q = self._encode(v, q, fe_attn)
        attn_q2v = attn_v2q = None
        if self.cmca_q is not None:
            q_star, attn_q2v = self.cmca_q(q, v)
            v_star, attn_v2q = self.cmca_v(v, q)
        else:
            q_star, v_star = q, v
        if self.mode == "cmca_then_fe":
            v_star, q_star = self._encode(v_star, q_star, fe_attn)
        return CoAttendedFeatures(
            q_star=q_star,
            v_star=v_star,
            attn_q2v=attn_q2v,
            attn_v2q=attn_v2q,
            fe_attn=fe_attn,
        )

    def named(self, prefix: str = "encoder") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.proj_v.named(f"{prefix}.proj_v"))
        out.update(self.proj_q.named(f"{prefix}.proj_q"))
        if self.fe is not None:
            out.update(self.fe.named(f"{prefix}.fe"))
        if self.fe_q is not None:
            out.update(self.fe_q.named(f"{prefix}.fe_q"))
        if self.cmca_q is not None:
            out.update(self.cmca_q.named(f"{prefix}.cmca_q"))
            out.update(self.cmca_v.named(f"{prefix}.cmca_v"))
        return out


def feature_encode(x: Tensor, proj: LinearParams, fe: FeatureEncoderBlock) -> Tensor:
    """Project raw features to the model dimension and run the encoder block."""
    out, _ = fe(proj(x))
    return out


def cmca(query_side: Tensor, kv_side: Tensor, params: CrossAttentionBlock) -> tuple[Tensor, np.ndarray]:
    """One direction of cross-modal attention: query_side attends into kv_side."""
    return params(query_side, kv_side)


def encode_pair(video: Tensor, query: Tensor, encoder: VideoLanguageEncoder) -> CoAttendedFeatures:
    """Full pipeline from raw features to co-attended streams."""
    return encoder(video, query)
