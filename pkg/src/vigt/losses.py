"""Training objective: boundary terms on the interval, BCE on clip scores.

The total is a weighted sum of three parts, each individually switchable:
smooth-L1 between the predicted and reference (start, end) pairs, a
generalized-IoU penalty on the same pair, and binary cross-entropy over
per-clip foreground probabilities.  Default weights 0.5 / 1.0 / 2.0.
Both boundary terms take moments and convert through the (center, width)
-> (start, end) map internally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .heads import Interval, Moment, moment_to_interval
from .tensor import (
    Tensor,
    add,
    as_tensor,
    clamp,
    log,
    maximum,
    mean,
    minimum,
    smooth_l1,
    sub,
)


@dataclass
class LossWeights:
    lam: float = 0.5  # smooth-L1
    beta: float = 1.0  # generalized IoU
    alpha: float = 2.0  # foreground BCE

    def validate(self) -> "LossWeights":
        if min(self.lam, self.beta, self.alpha) < 0:
            raise ConfigError("loss weights must be nonnegative")
        return self


@dataclass
class LossFlags:
    use_l1: bool = True
    use_giou: bool = True
    use_cls: bool = True


@dataclass
class LossBreakdown:
    """Weighted term values; disabled terms stay None.  total = sum of the rest."""

    total: float
    l1: float | None = None
    giou: float | None = None
    cls: float | None = None

    def as_dict(self) -> dict[str, float]:
        out = {"total": self.total}
        for k in ("l1", "giou", "cls"):
            v = getattr(self, k)
            if v is not None:
                out[k] = v
        return out


def smooth_l1_boundary(pred: Moment, gt: Moment) -> Tensor:
    """Mean smooth-L1 over the two endpoints of the converted intervals."""
    p, g = moment_to_interval(pred), moment_to_interval(gt)
    ds = smooth_l1(sub(p.start, g.start))
    de = smooth_l1(sub(p.end, g.end))
    return (ds + de) * 0.5


def giou_1d(a: Interval, b: Interval) -> Tensor:
    """Generalized IoU of two intervals, in (-1, 1].

    inter/union minus the hull deficit (hull - union) / hull.  Degenerate
    cases follow set conventions: two empty intervals at the same point
    are identical (giou 1); an empty union inside a non-empty hull keeps
    only the hull penalty.
    """
    inter = maximum(sub(minimum(a.end, b.end), maximum(a.start, b.start)), 0.0)
    len_a = maximum(sub(a.end, a.start), 0.0)
    len_b = maximum(sub(b.end, b.start), 0.0)
    union = sub(add(len_a, len_b), inter)
    hull = sub(maximum(a.end, b.end), minimum(a.start, b.start))
    union_v = union.item()
    hull_v = hull.item()
    if union_v == 0.0 and hull_v == 0.0:
        return as_tensor(1.0) + (union * 0.0)  # keep graph connectivity
    if union_v == 0.0:
        iou = union * 0.0
    else:
        iou = inter / union
    if hull_v == 0.0:
        return iou
    # hull >= union algebraically; clamp shields the <= iou bound from
    # one-ulp cancellation when the two are computed along different paths
    return iou - maximum(sub(hull, union), 0.0) / hull


def giou_loss(pred: Moment, gt: Moment) -> Tensor:
    """1 - giou of the converted intervals; in [0, 2)."""
    return sub(1.0, giou_1d(moment_to_interval(pred), moment_to_interval(gt)))


def bce_foreground(a: Tensor, a_hat: Tensor) -> Tensor:
    """Mean binary cross-entropy of scores ``a`` against 0/1 labels ``a_hat``.

    Scores are clamped to [1e-7, 1 - 1e-7] first.
    """
    if a.shape != a_hat.shape:
        raise ShapeError(f"score/label shapes disagree: {a.shape} vs {a_hat.shape}")
    p = clamp(a, 1e-7, 1.0 - 1e-7)
    losses = sub(0.0, add(a_hat * log(p), (1.0 - a_hat) * log(1.0 - p)))
    return mean(losses)


def make_foreground_labels(gt: Interval, t: int) -> np.ndarray:
    """Label clip k as 1 iff its center (k + 0.5)/t lies in [gt.start, gt.end]."""
    centers = (np.arange(t) + 0.5) / t
    return ((centers >= gt.start) & (centers <= gt.end)).astype(float)


def total_loss(
    pred: Moment,
    gt: Moment,
    a: Tensor | None,
    a_hat: Tensor | None,
    weights: LossWeights | None = None,
    flags: LossFlags | None = None,
) -> tuple[Tensor, LossBreakdown]:
    """Weighted sum of the enabled terms; at least one must be enabled.

    Returns the scalar loss tensor and the weighted per-term values.
    """
    weights = (weights or LossWeights()).validate()
    flags = flags or LossFlags()
    if not (flags.use_l1 or flags.use_giou or flags.use_cls):
        raise ConfigError("all loss terms disabled; enable at least one")
    terms: list[Tensor] = []
    parts: dict[str, float] = {}
    if flags.use_l1:
        term = smooth_l1_boundary(pred, gt) * weights.lam
        terms.append(term)
        parts["l1"] = term.item()
    if flags.use_giou:
        term = giou_loss(pred, gt) * weights.beta
        terms.append(term)
        parts["giou"] = term.item()
    if flags.use_cls:
        if a is None or a_hat is None:
            raise ConfigError("foreground term enabled but scores or labels missing")
        term = bce_foreground(a, a_hat) * weights.alpha
        terms.append(term)
        parts["cls"] = term.item()
    total = terms[0]
    for term in terms[1:]:
        total = add(total, term)
    return total, LossBreakdown(total=total.item(), **parts)
