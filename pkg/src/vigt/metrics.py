"""Evaluation metrics over (predicted, ground-truth) interval pairs.

Recall at an IoU threshold uses a strict inequality (IoU > m) by default;
a compatibility flag switches to >= for comparing against tools that
include the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, UsageError
from .heads import Interval

IOU_THRESHOLDS = (0.3, 0.5, 0.7)


@dataclass
class EvalRecord:
    query_id: int | str
    predicted: Interval
    ground_truth: Interval


def temporal_iou(a: Interval, b: Interval) -> float:
    """Intersection over union of two intervals; 0 when the union is empty."""
    inter = max(0.0, min(a.end, b.end) - max(a.start, b.start))
    union = max(0.0, a.end - a.start) + max(0.0, b.end - b.start) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def record_ious(records: Sequence[EvalRecord]) -> np.ndarray:
    if not records:
        raise UsageError("no evaluation records")
    return np.array([temporal_iou(r.predicted, r.ground_truth) for r in records])


def recall_at_iou(
    records: Sequence[EvalRecord],
    m: float,
    inclusive: bool = False,
) -> float:
    """Fraction of records whose IoU beats m (strictly, by default)."""
    ious = record_ious(records)
    hits = ious >= m if inclusive else ious > m
    return float(hits.mean())


def mean_iou(records: Sequence[EvalRecord]) -> float:
    # sequential sum, not np.mean: pairwise summation would drift from a
    # plain running average by an ulp and the oracle match is exact
    ious = record_ious(records)
    return float(sum(ious.tolist()) / len(ious))


def uniform_bins(n_bins: int) -> list[tuple[float, float]]:
    if n_bins < 1:
        raise ConfigError(f"need at least one bin, got {n_bins}")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    return [(float(edges[i]), float(edges[i + 1])) for i in range(n_bins)]


def iou_histogram(
    records: Sequence[EvalRecord],
    bins: Sequence[tuple[float, float]],
) -> list[tuple[float, float, int]]:
    """Counts per [lo, hi) bin; the final bin closes at 1 so IoU 1.0 lands in it.

    Bins must partition [0, 1]: sorted, gap-free, non-overlapping.
    """
    if not bins:
        raise ConfigError("histogram needs at least one bin")
    if bins[0][0] != 0.0 or bins[-1][1] != 1.0:
        raise ConfigError(f"bins must cover [0, 1], got [{bins[0][0]}, {bins[-1][1]}]")
    for (lo, hi), (nlo, _) in zip(bins, bins[1:]):
        if nlo < hi:
            raise ConfigError(f"overlapping bins at {hi} vs {nlo}")
        if nlo > hi:
            raise ConfigError(f"gap between bins at {hi} vs {nlo}")
    for lo, hi in bins:
        if hi <= lo:
            raise ConfigError(f"empty bin [{lo}, {hi}]")
    ious = record_ious(records)
    edges = np.array([b[0] for b in bins] + [bins[-1][1]])
    idx = np.minimum(np.searchsorted(edges, ious, side="right") - 1, len(bins) - 1)
    counts = np.bincount(idx, minlength=len(bins))
    return [(lo, hi, int(counts[i])) for i, (lo, hi) in enumerate(bins)]


def summarize(records: Sequence[EvalRecord], inclusive: bool = False) -> dict[str, float]:
    """The standard report: recall at each threshold plus mean IoU."""
    out = {
        f"recall@{m}": recall_at_iou(records, m, inclusive) for m in IOU_THRESHOLDS
    }
    out["mean_iou"] = mean_iou(records)
    return out


def metrics_csv(summary: dict[str, float]) -> str:
    lines = ["metric,value"]
    lines += [f"{k},{v:.6f}" for k, v in summary.items()]
    return "\n".join(lines) + "\n"


def histogram_csv(bins: Iterable[tuple[float, float, int]]) -> str:
    lines = ["bin_lo,bin_hi,count"]
    lines += [f"{lo:.6f},{hi:.6f},{n}" for lo, hi, n in bins]
    return "\n".join(lines) + "\n"


def predictions_csv(records: Sequence[EvalRecord]) -> str:
    lines = ["query_id,pred_start,pred_end,gt_start,gt_end,iou"]
    for r in records:
        iou = temporal_iou(r.predicted, r.ground_truth)
        lines.append(
            f"{r.query_id},{r.predicted.start:.6f},{r.predicted.end:.6f},"
            f"{r.ground_truth.start:.6f},{r.ground_truth.end:.6f},{iou:.6f}"
        )
    return "\n".join(lines) + "\n"
